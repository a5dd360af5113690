import sys

from octave_codec.cli import main

sys.exit(main())
