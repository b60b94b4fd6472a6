"""Time the standard and multi-task pipelines on 20 scenes of 512x512.

Trains the reference multi-task model first unless ``--untrained`` is given;
timings do not depend on the weights, only mask quality does.
"""
import argparse

from _common import dump

from mtmask.experiments import REFERENCE_TRAIN, BenchConfig, ParityConfig, run_bench, scenes
from mtmask.net import ModelSpec, MultiTaskModel, train

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out")
    ap.add_argument("--untrained", action="store_true")
    ap.add_argument("--no-memory", action="store_true")
    args = ap.parse_args()
    model = MultiTaskModel(ModelSpec(), seed=0)
    if not args.untrained:
        model = train(model, scenes(ParityConfig().train_seeds), REFERENCE_TRAIN)[0]
    dump(run_bench(model, BenchConfig(), measure_memory=not args.no_memory), args.out)
