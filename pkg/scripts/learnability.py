"""Train a reduced BiGRU on synthetic BKT students and compare its test AUC with the generator's ceiling."""

import argparse
import logging
from dataclasses import replace

from dynkt.experiments import LearnabilitySetup, learnability


def main() -> None:
    base = LearnabilitySetup()
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--students", type=int, default=base.students)
    p.add_argument("--skills", type=int, default=base.skills)
    p.add_argument("--epochs", type=int, default=base.epochs)
    p.add_argument("--width", type=int, default=base.width)
    p.add_argument("--seed", type=int, default=base.seed)
    args = p.parse_args()
    logging.basicConfig(level=logging.ERROR)
    setup = replace(base, students=args.students, skills=args.skills, epochs=args.epochs, width=args.width,
                    seed=args.seed)
    res = learnability(setup, on_epoch=lambda e: print(e.line(), flush=True))
    print(f"ceiling_auc = {res.ceiling_auc:.4f}\ntest_auc = {res.test_auc:.4f}\ngap = {res.gap:.4f}\n"
          f"best_epoch = {res.best_epoch}\nseconds = {res.seconds:.0f}")


if __name__ == "__main__":
    main()
