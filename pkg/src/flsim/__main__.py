import sys

from flsim.cli import main

sys.exit(main())
