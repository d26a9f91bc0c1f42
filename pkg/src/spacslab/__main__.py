import sys

from spacslab.cli import main

sys.exit(main())
