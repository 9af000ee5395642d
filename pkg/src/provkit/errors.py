"""Exception hierarchy shared by every provkit module."""

from __future__ import annotations


class ProvError(Exception):
    """Base class; ``code`` is the stable machine-readable name."""

    code = "ProvError"

    def __init__(self, detail: str = "") -> None:
        super().__init__(detail or self.code)
        self.detail = detail


class DataError(ProvError):
    """Bad input data (as opposed to a bad invocation)."""


class EmptyId(DataError):
    code = "EmptyId"


class UnknownPrefix(DataError):
    code = "UnknownPrefix"

    def __init__(self, prefix: str) -> None:
        super().__init__(f"unknown namespace prefix {prefix!r}")
        self.prefix = prefix


class ConflictingRecord(DataError):
    code = "ConflictingRecord"

    def __init__(self, record_id: object, detail: str = "") -> None:
        msg = f"conflicting definitions for {record_id}"
        super().__init__(f"{msg}: {detail}" if detail else msg)
        self.record_id = record_id


class ConflictingNamespace(DataError):
    code = "ConflictingNamespace"

    def __init__(self, prefix: str) -> None:
        super().__init__(f"prefix {prefix!r} bound to two different URIs")
        self.prefix = prefix


class MalformedJson(DataError):
    code = "MalformedJson"


class UnknownEventKind(DataError):
    code = "UnknownEventKind"

    def __init__(self, kind: object) -> None:
        super().__init__(f"unknown event kind {kind!r}")
        self.kind = kind


class MissingField(DataError):
    code = "MissingField"

    def __init__(self, kind: str, field: str) -> None:
        super().__init__(f"{kind} event lacks mandatory field {field!r}")
        self.kind = kind
        self.field = field


class UseAfterEnd(ProvError):
    code = "UseAfterEnd"


class NotFound(DataError):
    code = "NotFound"

    def __init__(self, record_id: object) -> None:
        super().__init__(f"no record with id {record_id}")
        self.record_id = record_id


class CorruptStore(DataError):
    code = "CorruptStore"

    def __init__(self, path: object, detail: str) -> None:
        super().__init__(f"{path}: {detail}")
        self.path = path


class UnknownSection(DataError):
    code = "UnknownSection"

    def __init__(self, name: str) -> None:
        super().__init__(f"unsupported PROV-JSON section {name!r}")
        self.name = name


class BadRecord(DataError):
    code = "BadRecord"

    def __init__(self, record_id: object, detail: str) -> None:
        super().__init__(f"{record_id}: {detail}")
        self.record_id = record_id


class CyclicGraph(DataError):
    code = "CyclicGraph"


class InvalidRecord(DataError):
    code = "InvalidRecord"


class TooManyIndexed(DataError):
    code = "TooManyIndexed"


class MalformedCard(DataError):
    code = "MalformedCard"

    def __init__(self, index: int, detail: str) -> None:
        super().__init__(f"card {index}: {detail}")
        self.index = index


class DuplicateKeyword(DataError):
    code = "DuplicateKeyword"

    def __init__(self, keyword: str) -> None:
        super().__init__(f"keyword {keyword} appears more than once")
        self.keyword = keyword


class NoProvenance(DataError):
    code = "NoProvenance"


class MissingId(DataError):
    code = "MissingId"


class BadValue(DataError):
    code = "BadValue"

    def __init__(self, param: str, value: str, detail: str = "") -> None:
        msg = f"bad value {value!r} for {param}"
        super().__init__(f"{msg} ({detail})" if detail else msg)
        self.param = param
        self.value = value


class UnknownParam(DataError):
    code = "UnknownParam"

    def __init__(self, name: str) -> None:
        super().__init__(f"unknown parameter {name!r}")
        self.name = name


class BindFailure(ProvError):
    code = "BindFailure"
