#!/usr/bin/env python3
"""Run the velocity-alignment experiment (extra CLI flags pass through)."""

import sys
from pathlib import Path

from mdpc.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "test2.cfg"

if __name__ == "__main__":
    sys.exit(main(["run", str(CONFIG), *sys.argv[1:]]))
