"""Fit both model variants to a handful of synthetic windows and report epochs to the target AUC."""

import argparse
import logging

from dynkt.experiments import overfit


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--windows", type=int, default=64)
    p.add_argument("--max-epochs", type=int, default=300)
    p.add_argument("--target-auc", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    logging.basicConfig(level=logging.ERROR)
    for variant in ("bigru", "tdnn"):
        r = overfit(variant, n_windows=args.windows, max_epochs=args.max_epochs, target_auc=args.target_auc,
                    seed=args.seed)
        print(f"{variant}\tepochs={r.epochs_run}\ttrain_auc={r.train_auc:.4f}\tseconds={r.seconds:.1f}")


if __name__ == "__main__":
    main()
