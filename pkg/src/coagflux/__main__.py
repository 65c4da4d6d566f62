# src/coagflux/__main__.py
import sys

from coagflux.cli import main

if __name__ == "__main__":
    sys.exit(main())
