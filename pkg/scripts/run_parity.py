"""Per-mask F1 of the multi-task model against five single-task models,
plus the scarce snow/ice case and the MNDWI water baseline."""
import argparse

from _common import dump

from mtmask.experiments import ParityConfig, run_baseline_comparison, run_parity

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out")
    ap.add_argument("--skip-scarce", action="store_true")
    args = ap.parse_args()
    cfg = ParityConfig()
    normal = run_parity(cfg)
    out = {
        "multi": normal["multi"],
        "single": normal["single"],
        "baseline": run_baseline_comparison(normal["model"], cfg),
    }
    if not args.skip_scarce:
        scarce = run_parity(cfg, scarce=True, masks=("snow_ice",))
        out["scarce"] = {k: scarce[k] for k in ("multi", "single", "snow_fraction")}
    dump(out, args.out)
