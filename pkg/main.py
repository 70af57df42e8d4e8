# main.py - entry point: python main.py <subcommand> [options]
import sys

from cli import run

if __name__ == "__main__":
    sys.exit(run())
