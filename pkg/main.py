#!/usr/bin/env python3
"""
Checkpoint tracker command line.
Run with: python main.py [--config PATH] [-v] <command> ...
"""

import os
import sys

# the package is imported as `src.*`, so the repository root must be importable
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cli.main import cli  # noqa: E402

if __name__ == "__main__":
    cli(prog_name="checkpoint-track")
