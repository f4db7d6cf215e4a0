import sys

from fracsource.cli import main

sys.exit(main())
