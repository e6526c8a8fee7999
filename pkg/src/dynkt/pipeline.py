"""End-to-end workflows shared by the CLI and the experiment scripts."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data as D
from .config import RunConfig
from .errors import DataError
from .evaluation import EvalReport, evaluate
from .model import KTModel
from .optim import CVResult, TrainResult, cross_validate, train
from .serialize import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


def preprocess(raw_csv: str | Path, out_dir: str | Path, rules: str | Path | None = None, seed: int = 0,
               do_split: bool = True, skill_column: str = "skill_id") -> D.CleanStats:
    """parse -> drop missing -> merge ids -> normalize names -> (split); writes outputs into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    subs = D.load_substitutions(rules) if rules else D.DEFAULT_SUBSTITUTIONS
    rows = D.parse_csv(raw_csv, skill_column=skill_column)
    cleaned, stats = D.clean(rows, subs)
    D.write_csv(out / "cleaned.csv", cleaned)
    stamp = hashlib.sha256(f"{Path(raw_csv).name}|{rules}|{seed}|{do_split}".encode()).hexdigest()[:16]
    (out / "stats.txt").write_text(f"seed = {seed}\nconfig_hash = {stamp}\n" + stats.to_text(), encoding="utf-8")
    if do_split:
        users = list(dict.fromkeys(it.user_id for it in cleaned))
        D.split(users, seed).write(out / "manifests")
    return stats


@dataclass
class Dataset:
    vocab: D.SkillVocab
    windows: D.WindowSet


def load_dataset(csv_path: str | Path, window: int, vocab_ids: list[str] | None = None) -> Dataset:
    rows = D.parse_csv(csv_path)
    cleaned, _ = D.drop_missing(rows)
    if vocab_ids is None:
        vocab = D.SkillVocab.build(cleaned)
    else:
        names = {it.skill_id: it.skill_name for it in cleaned}
        vocab = D.SkillVocab(list(vocab_ids), [names.get(s, "") for s in vocab_ids])
        unknown = {it.skill_id for it in cleaned} - set(vocab_ids)
        if unknown:
            raise DataError(f"{len(unknown)} skill ids not in the checkpoint vocabulary, e.g. {sorted(unknown)[0]!r}")
    seqs = D.group_by_student(cleaned, vocab)
    return Dataset(vocab, D.build_windows(seqs, window))


def _skill_weights(cfg: RunConfig, vocab: D.SkillVocab) -> np.ndarray | None:
    if cfg.embedding.init != "pretrained":
        return None
    rng = np.random.default_rng(cfg.seed)
    return D.load_pretrained_skill_vectors(cfg.embedding.vectors, vocab, cfg.embedding.method,
                                           cfg.model.embed_dim, rng=rng)


@dataclass
class TrainOutcome:
    model: KTModel
    result: TrainResult
    cv: CVResult | None


def run_train(cfg: RunConfig) -> TrainOutcome:
    """Train on the configured fold and write checkpoint, metrics and resolved config to ``cfg.out``."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(cfg.data.csv, cfg.model.window)
    model_cfg = replace(cfg.model, skill_vocab_size=ds.vocab.size)
    split = D.Split.read(cfg.data.manifests)
    if not split.folds:
        raise DataError(f"{cfg.data.manifests}: no fold manifests found")
    if cfg.data.fold >= len(split.folds):
        raise DataError(f"data.fold = {cfg.data.fold} but only {len(split.folds)} folds exist")
    weights = _skill_weights(cfg, ds.vocab)
    make_model = lambda: KTModel(model_cfg, skill_weights=weights)
    folds = [(ds.windows.for_users(tr), ds.windows.for_users(va)) for tr, va in split.folds]
    header = [f"config_hash = {cfg.hash()}", f"seed = {cfg.seed}"]

    cv = None
    if cfg.data.cross_validate:
        cv = cross_validate(make_model, folds, cfg.train, expected_folds=len(split.folds))
        lines = [f"# {h}" for h in header] + ["fold\tval_auc"]
        lines += [f"{k}\t{a!r}" for k, a in enumerate(cv.fold_aucs)]
        lines.append(f"mean\t{cv.mean_auc!r}")
        (out / "cv.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    model = make_model()
    tr, va = folds[cfg.data.fold]
    result = train(model, tr, va, cfg.train)
    (out / "metrics.tsv").write_text(result.log_text(header), encoding="utf-8")
    save_checkpoint(out / "checkpoint.bin", model,
                    extra={"config_hash": cfg.hash(), "best_epoch": str(result.best_epoch)},
                    vocab_ids=ds.vocab.ids)
    (out / "config.txt").write_text(cfg.canonical(), encoding="utf-8")
    return TrainOutcome(model, result, cv)


def run_eval(checkpoint: str | Path, csv_path: str | Path, manifest: str | Path | None,
             out_dir: str | Path) -> EvalReport:
    model, header = load_checkpoint(checkpoint)
    vocab_ids = json.loads(header["vocab_ids"]) if "vocab_ids" in header else None
    ds = load_dataset(csv_path, model.config.window, vocab_ids)
    windows = ds.windows if manifest is None else ds.windows.for_users(D.read_manifest(manifest))
    report = evaluate(model, windows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.txt", out / "examples.tsv",
                 extra={"config_hash": header.get("config_hash", "-"), "seed": header.get("seed", "-")})
    return report
