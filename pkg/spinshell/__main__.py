"""python -m spinshell"""
import sys

from spinshell.cli import main

sys.exit(main())
