"""
Block g Variable Selection
Main entry point for the command-line application.
"""

import sys

from cli.main import main as cli_main


def main():
    """Main entry point."""
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
