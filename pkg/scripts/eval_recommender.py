#!/usr/bin/env python3
"""Train the autoencoder recommender on the synthetic two-cluster dataset and
report the learning curve, held-out recall@1 and the random baseline.

Usage:
    python scripts/eval_recommender.py [--epochs 200] [--lr 0.05] [--seeds 5]
"""

import argparse

import numpy as np

from convrec.autorec import autorec_loss_grad, init_params, train
from convrec.datasets import make_two_cluster_dataset, random_recall_baseline, recall_at_1


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--items", type=int, default=20)
    parser.add_argument("--users", type=int, default=40)
    parser.add_argument("--hidden", type=int, default=32)
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--lr", type=float, default=0.05)
    parser.add_argument("--l2", type=float, default=1e-4)
    parser.add_argument("--seeds", type=int, default=5)
    args = parser.parse_args()

    recalls, ratios = [], []
    for seed in range(args.seeds):
        ds = make_two_cluster_dataset(args.items, args.users, seed=seed)
        p0 = init_params(args.items, hidden_size=args.hidden, seed=seed + 100)
        initial, _ = autorec_loss_grad(p0, ds.train, l2=args.l2)
        losses: list[float] = []
        p = train(
            p0,
            ds.train,
            epochs=args.epochs,
            lr=args.lr,
            l2=args.l2,
            on_epoch=lambda e, l: losses.append(l),
        )
        final, _ = autorec_loss_grad(p, ds.train, l2=args.l2)
        recall = recall_at_1(p, ds)
        baseline = random_recall_baseline(ds)
        recalls.append(recall)
        ratios.append(final / initial)
        marks = " ".join(f"{losses[i]:.3f}" for i in range(0, args.epochs, max(args.epochs // 8, 1)))
        print(
            f"seed {seed}: loss {initial:.3f} -> {final:.3f} "
            f"(x{final / initial:.3f})  recall@1 {recall:.2f}  random {baseline:.3f}"
        )
        print(f"  curve: {marks}")

    print(
        f"\nover {args.seeds} seeds: mean loss ratio {np.mean(ratios):.3f}, "
        f"mean recall@1 {np.mean(recalls):.2f}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
