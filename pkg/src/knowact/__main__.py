import sys

from knowact.cli import main

sys.exit(main())
