import sys

from robust_allocation.main import main

sys.exit(main())
