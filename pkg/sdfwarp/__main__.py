import sys

from sdfwarp.cli import main

sys.exit(main())
