"""Runs the command line interface.

You can run this file by writing "python -m intrnn"
"""
import sys

from intrnn.cli import main

if __name__ == "__main__":
    sys.exit(main())
