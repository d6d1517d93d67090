import sys

from dgz.cli import main

sys.exit(main())
