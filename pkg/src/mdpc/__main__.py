import sys

from mdpc.cli import main

sys.exit(main())
