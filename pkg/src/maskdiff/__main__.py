import sys

from maskdiff.cli import main

sys.exit(main())
