import sys

from fedmes.cli import main

sys.exit(main())
