import sys

from runs.cli import run

# Single entry point of the toolkit, see "python3 start_icth.py --help" for the subcommands and the flags.
# Every setting of utils/settings.py can be set with a flag or in the configuration file (--config).
if __name__ == '__main__':
    sys.exit(run())
