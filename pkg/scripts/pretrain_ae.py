"""Pretrain the map autoencoder on sampled patches and compare the held-out
reconstruction error with the per-channel-mean baseline.

    python3 scripts/pretrain_ae.py --out runs/ae --epochs 30 --lr 1e-3
"""
import argparse
import time
from pathlib import Path

from hgtraj.model.autoencoder import (AEConfig, mean_baseline_mse, pretrain_autoencoder, reconstruction_mse,
                                      sample_patches, save_autoencoder)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/ae")
    ap.add_argument("--n-train", type=int, default=200)
    ap.add_argument("--n-heldout", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=AEConfig.epochs)
    ap.add_argument("--lr", type=float, default=AEConfig.lr)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t0 = time.perf_counter()
    train_p = sample_patches(args.n_train, args.seed)
    held = sample_patches(args.n_heldout, args.seed + 1)
    model, _ = pretrain_autoencoder(train_p, AEConfig(lr=args.lr, epochs=args.epochs), args.seed,
                                    lambda e, l: print(f"{e:4d}  {l:.5f}  {time.perf_counter() - t0:.0f}s",
                                                       flush=True))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    save_autoencoder(model, Path(args.out) / "autoencoder.ckpt")
    mse, base = reconstruction_mse(model, held), mean_baseline_mse(held)
    print(f"held-out {mse:.5f}  baseline {base:.5f}  ratio {mse / base:.3f}")


if __name__ == "__main__":
    main()
