"""Fit the two-regressor SSC ensemble and report validation/test RMSE."""
import argparse

from _common import dump

from mtmask.experiments import SscExperimentConfig, run_ssc

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out")
    args = ap.parse_args()
    dump(run_ssc(SscExperimentConfig()), args.out)
