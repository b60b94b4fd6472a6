"""Train the multi-task model on 8 scenes until mean F1 reaches 0.90."""
import argparse

from _common import dump

from mtmask.experiments import OverfitConfig, run_overfit

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out")
    args = ap.parse_args()
    dump(run_overfit(OverfitConfig()), args.out)
