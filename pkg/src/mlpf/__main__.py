import sys

from mlpf.harness.cli import main

sys.exit(main())
