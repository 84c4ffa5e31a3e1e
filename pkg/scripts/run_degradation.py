"""Accuracy vs accent strength for the text, simulated-acoustic and fused routes.

Writes per-seed accuracies as CSV and prints mean +/- standard error per rho.
"""
import argparse
import time
from pathlib import Path

from accentlid.corpus import atomic_write_text, load_dataset
from accentlid.evalsim import NBBackendRoute, NBRoute, degradation_experiment
from accentlid.synth import load_bundled


def load(spec):
    return load_bundled(spec.split(":", 1)[1]) if spec.startswith("bundled:") else load_dataset(spec)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train", default="bundled:train")
    ap.add_argument("--test", default="bundled:test")
    ap.add_argument("--rho-grid", default="0,0.15,0.3,0.45,0.6")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--route", choices=["nb", "nb-plda"], default="nb")
    ap.add_argument("--out", type=Path, default=Path("degradation.csv"))
    args = ap.parse_args()

    train, test = load(args.train), load(args.test)
    asr = sorted(train[0].transcripts)
    pipeline = (lambda: NBRoute(asr)) if args.route == "nb" else (lambda: NBBackendRoute(asr))
    grid = [float(x) for x in args.rho_grid.split(",")]
    t0 = time.time()
    res = degradation_experiment(train, test, grid, seeds=range(args.seeds), pipeline=pipeline)
    atomic_write_text(args.out, res.to_csv())

    routes = ("text", "acoustic", "fused")
    summ = {r: res.summary(r) for r in routes}
    print(f"{'rho':>6}" + "".join(f"{r:>18}" for r in routes))
    for rho in grid:
        print(f"{rho:>6.2f}" + "".join(f"{summ[r][rho][0]:>11.3f} ±{summ[r][rho][1]:.3f}" for r in routes))
    print(f"{len(test)} test utterances x {args.seeds} seeds, {time.time() - t0:.1f}s -> {args.out}")


if __name__ == "__main__":
    main()
