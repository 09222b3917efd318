import sys

from diptv.cli import main

sys.exit(main())
