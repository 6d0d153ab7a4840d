"""Overfit the full model on eight y_fork scenes and report the fit and the
branch coverage of agents that have not reached the fork yet.

    python3 scripts/overfit.py --out runs/overfit [--autoencoder runs/ae/autoencoder.ckpt]
"""
import argparse
import dataclasses
import json
import time

from hgtraj.experiments import OVERFIT_TRAIN, overfit_run, pre_fork_cases
from hgtraj.model.autoencoder import load_autoencoder


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/overfit")
    ap.add_argument("--autoencoder")
    ap.add_argument("--epochs", type=int, default=OVERFIT_TRAIN.epochs)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    enc = load_autoencoder(args.autoencoder) if args.autoencoder else None
    cfg = dataclasses.replace(OVERFIT_TRAIN, epochs=args.epochs, seed=args.seed)
    t0 = time.perf_counter()
    out = overfit_run(args.out, encoder=enc, cfg=cfg,
                      log=lambda r: print(f"{r['epoch']:4d}  loss {r['loss']:.4f}  minADE_K {r['minADE_K']:.3f}",
                                          flush=True))
    cases = pre_fork_cases(out.scenes, out.samples, out.preds)
    summary = {"seconds": time.perf_counter() - t0, "loss_reduction": out.loss_reduction, **out.metrics,
               "pre_fork": [dataclasses.asdict(c) for c in cases]}
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
