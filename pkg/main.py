#!/usr/bin/env python3
"""
Main entry point for the TD-regularization experiments
Dispatches to the command line in src/td_regularization/cli.py
"""

import sys

from src.td_regularization.cli import main

if __name__ == "__main__":
    sys.exit(main())
