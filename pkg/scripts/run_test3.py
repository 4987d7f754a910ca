#!/usr/bin/env python3
"""Run the aggregation experiment (extra CLI flags pass through)."""

import sys
from pathlib import Path

from mdpc.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "test3.cfg"

if __name__ == "__main__":
    sys.exit(main(["run", str(CONFIG), *sys.argv[1:]]))
