import sys

from gcnboost.cli import main

sys.exit(main())
