import sys

from hangsim.cli import main

sys.exit(main())
