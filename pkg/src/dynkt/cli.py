"""Command-line entry point.

    dynkt preprocess --input raw.csv --out data/ [--rules rules.txt] [--seed N] [--no-split]
    dynkt synth --out data/ [--students 500 --skills 20 --learn 0.2 --guess 0.2 --slip 0.1]
    dynkt train --config run.ini [--seed N] [--out DIR]
    dynkt eval --checkpoint ckpt.bin --data cleaned.csv [--manifest test.txt] --out DIR
    dynkt gradcheck [--out DIR]
    dynkt significance --a examples_a.tsv --b examples_b.tsv [--out DIR]

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import data as D
from .config import load_run_config
from .errors import ConfigError, DataError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("dynkt")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def stamp(settings: dict) -> str:
    """``key = value`` header lines ending with a hash over the settings."""
    body = "".join(f"{k} = {v}\n" for k, v in settings.items())
    digest = hashlib.sha256(body.encode()).hexdigest()[:16]
    return body + f"config_hash = {digest}\n"


def cmd_preprocess(args) -> int:
    from .pipeline import preprocess

    stats = preprocess(args.input, args.out, args.rules, args.seed, do_split=not args.no_split,
                       skill_column=args.skill_column)
    print(stats.to_text(), end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    params = D.SynthParams(learn=args.learn, guess=args.guess, slip=args.slip, p_init=args.p_init,
                           min_length=args.min_length, max_length=args.max_length)
    ds = D.synth_generate(args.students, args.skills, params, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds.write(out / "synthetic.csv")
    settings = {"students": args.students, "skills": args.skills, **{k: repr(v) for k, v in vars(params).items()},
                "seed": args.seed}
    (out / "synth.txt").write_text(stamp(settings), encoding="utf-8")
    print(f"wrote {len(ds.interactions)} interactions for {args.students} students to {out / 'synthetic.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import run_train

    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    outcome = run_train(cfg)
    res = outcome.result
    print(f"best_epoch = {res.best_epoch}\nbest_val_auc = {res.best_val_auc!r}\nout = {cfg.out}")
    if outcome.cv is not None:
        print(f"cv_mean_auc = {outcome.cv.mean_auc!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import run_eval

    if not Path(args.checkpoint).is_file():
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    report = run_eval(args.checkpoint, args.data, args.manifest, args.out)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_table, run_suite

    seed = args.seed or 0
    rows = run_suite(seed)
    table = format_table(rows)
    print(table)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "gradcheck.txt").write_text(stamp({"seed": seed}) + table + "\n", encoding="utf-8")
    failed = [r for r in rows if not r.passed]
    for r in failed:
        print(f"FAILED {r.name}: max relative error {r.max_error:.3e} > {r.tol:.0e} (worst: {r.worst})",
              file=sys.stderr)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_significance(args) -> int:
    from .evaluation import read_examples, t_test

    a, _ = read_examples(args.a)
    b, _ = read_examples(args.b)
    res = t_test(a, b)
    text = (f"t_statistic = {res.t_statistic!r}\ndegrees_of_freedom = {res.degrees_of_freedom!r}\n"
            f"p_value = {res.p_value!r}\n")
    print(text, end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        inputs = {name: hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
                  for name, path in (("input_a_sha256", args.a), ("input_b_sha256", args.b))}
        (Path(args.out) / "significance.txt").write_text(stamp(inputs) + text, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dynkt", description="Knowledge tracing with Bi-GRU and TDNN models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=False):
        if config:
            sp.add_argument("--config", required=True, help="key = value run configuration")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)

    sp = sub.add_parser("preprocess", help="clean a raw log and write split manifests")
    sp.add_argument("--input", required=True)
    sp.add_argument("--rules", default=None, help="skill-name substitution table ('old => new' lines)")
    sp.add_argument("--skill-column", default="skill_id")
    sp.add_argument("--no-split", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("synth", help="generate a synthetic BKT dataset")
    sp.add_argument("--students", type=int, default=500)
    sp.add_argument("--skills", type=int, default=20)
    sp.add_argument("--learn", type=float, default=0.2)
    sp.add_argument("--guess", type=float, default=0.2)
    sp.add_argument("--slip", type=float, default=0.1)
    sp.add_argument("--p-init", type=float, default=0.2)
    sp.add_argument("--min-length", type=int, default=30)
    sp.add_argument("--max-length", type=int, default=60)
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a model from a run configuration")
    common(sp, config=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="cleaned CSV")
    sp.add_argument("--manifest", default=None, help="user ids to evaluate (default: all)")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    common(sp)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("significance", help="Welch t-test between two per-example files")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    common(sp)
    sp.set_defaults(func=cmd_significance)
    return p


_REQUIRES_OUT = {"preprocess", "synth", "eval"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in _REQUIRES_OUT and args.out is None:
        parser.error(f"{args.command}: --out is required")
    if getattr(args, "seed", None) is None and args.command in ("preprocess", "synth"):
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
