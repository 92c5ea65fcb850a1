import sys

from rxnalign.cli import main

sys.exit(main())
