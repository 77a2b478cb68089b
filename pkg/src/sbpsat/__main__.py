import sys

from sbpsat.cli import main

sys.exit(main())
