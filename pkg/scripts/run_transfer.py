"""Epochs to reach mean F1 0.85 on distribution B, from scratch vs from a
backbone pretrained on distribution A."""
import argparse

from _common import dump

from mtmask.experiments import TransferConfig, run_transfer

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out")
    args = ap.parse_args()
    dump(run_transfer(TransferConfig()), args.out)
