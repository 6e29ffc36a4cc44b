"""``python -m fslm`` entry point."""

import sys

from fslm.cli import main

if __name__ == "__main__":
    sys.exit(main())
