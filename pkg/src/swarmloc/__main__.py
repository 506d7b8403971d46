import sys

from swarmloc.cli import main

sys.exit(main())
