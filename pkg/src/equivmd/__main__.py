from equivmd.cli import main
import sys
sys.exit(main())
