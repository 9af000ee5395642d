"""Inclusion flags and IVOA -> W3C model mapping applied before output."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from provkit.model import ProvenanceDocument


class Model(str, Enum):
    IVOA = "IVOA"
    W3C = "W3C"


@dataclass(frozen=True)
class ProjectionOptions:
    model: Model = Model.IVOA
    agents: bool = True
    configuration: bool = True
    descriptions: int = 1  # 0 none, 1 reference only, 2 full records
    attributes: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "model", Model(self.model))
        if self.descriptions not in (0, 1, 2):
            raise ValueError(f"descriptions level must be 0, 1 or 2, not {self.descriptions!r}")


def apply_projection(doc: ProvenanceDocument, opts: ProjectionOptions = ProjectionOptions()) -> ProvenanceDocument:
    """Return a filtered copy of ``doc``; the input is never modified.

    The W3C rewrite runs before attribute stripping so that applying the same
    options twice is a no-op.
    """
    out = doc.copy()
    if not opts.agents:
        out.agents = {}
        out.associations = []
        out.attributions = []
    if not opts.configuration:
        out.parameters = []

    if opts.model is Model.W3C:
        for param in out.parameters:
            act = out.activities.get(param.activity)
            if act is not None:
                act.attributes[f"voprov:parameter_{param.name}"] = param.value
        out.parameters = []
        if opts.descriptions == 2:
            for act in out.activities.values():
                desc = out.descriptions.get(act.description_ref) if act.description_ref else None
                if desc is None:
                    continue
                folded = {
                    "voprov:desc_name": desc.name or None,
                    "voprov:desc_version": desc.version,
                    "voprov:desc_docurl": desc.docurl,
                    "voprov:code_ref": (f"{desc.code_reference}@{desc.code_revision}"
                                        if desc.code_reference and desc.code_revision
                                        else desc.code_reference),
                }
                act.attributes.update({k: v for k, v in folded.items() if v})
        out.descriptions = {}

    if opts.descriptions == 0:
        out.descriptions = {}
        for act in out.activities.values():
            act.description_ref = None
    elif opts.descriptions == 1:
        out.descriptions = {}

    if not opts.attributes:
        for rec in out.records():
            if hasattr(rec, "attributes"):
                rec.attributes = {}

    out.incomplete_ids = {i for i in out.incomplete_ids if out.get(i) is not None}
    return out
