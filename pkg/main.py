#!/usr/bin/env python3
"""
LQ Synth - Punkt wejścia
========================

Uruchom:
    python main.py make-toy-did --out data/toy --hq-count 64
    python main.py train --data data/toy --iters 20000
    python main.py synth --hq data/toy/hq --checkpoint data/runs/train/checkpoints/final.dgdf

Lub użyj CLI:
    python -m lqsynth.cli --help
"""

import sys
from pathlib import Path

# Dodaj ścieżkę projektu
sys.path.insert(0, str(Path(__file__).parent))

from lqsynth.cli import main as cli_main


def main():
    """Główna funkcja."""
    cli_main()


if __name__ == "__main__":
    main()
