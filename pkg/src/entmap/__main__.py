import sys

from entmap.cli import main

sys.exit(main())
