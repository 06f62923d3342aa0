"""Allow ``python -m tablegraph``."""

import sys

from .cli import main

sys.exit(main())
