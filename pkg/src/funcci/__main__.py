import sys

from funcci.cli import main

sys.exit(main())
