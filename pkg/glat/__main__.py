"""Allow ``python -m glat <command>``."""

import sys

from glat.main import main

if __name__ == "__main__":
    sys.exit(main())
