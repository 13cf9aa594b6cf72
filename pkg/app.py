"""LBP-WHT command-line application - Entry Point"""

import sys

from src.cli import main

__all__ = ["main"]


if __name__ == "__main__":
    sys.exit(main())
