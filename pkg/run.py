#!/usr/bin/env python3
"""
Main runner script for sdrme
Runs experiment manifests, single fits and convexity checks from the repository checkout

    python run.py run --manifest config/manifests/poisson.json --set n=1000 --set seed=7
    python run.py certify chi
    python run.py fit counts.csv --model poisson --estimator s-kl --se sandwich
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from sdrme.cli import main

if __name__ == "__main__":
    sys.exit(main())
