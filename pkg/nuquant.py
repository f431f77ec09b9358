"""
Command-line entry point for nuquant.
Run ``python nuquant.py <subcommand> --help`` for the options of each step:
synth -> train -> quantize -> stats / compare / pca / neighbors / ablate.
"""

from src.cli import main

if __name__ == "__main__":
    main()
