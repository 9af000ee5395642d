import sys

from provkit.cli import main

sys.exit(main())
