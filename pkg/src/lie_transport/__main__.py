import sys

from lie_transport.cli import main

sys.exit(main())
