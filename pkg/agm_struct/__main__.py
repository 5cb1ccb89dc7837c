import sys

from agm_struct.cli import main

sys.exit(main())
