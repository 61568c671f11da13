import sys

from censimpute.cli import main

sys.exit(main())
