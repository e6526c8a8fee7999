"""Experiments: overfitting a small batch, learning synthetic BKT students, and the full-size real-data run."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from .config import BIGRU, DataConfig, ModelConfig, RunConfig, TrainConfig
from .evaluation import auc, evaluate
from .model import KTModel
from .optim import EpochLog, train

log = logging.getLogger(__name__)


@dataclass
class OverfitResult:
    variant: str
    epochs_run: int
    train_auc: float
    seconds: float
    history: list[EpochLog] = field(repr=False)


def overfit_windows(n_windows: int = 64, window: int = 20, seed: int = 0) -> tuple[D.WindowSet, int]:
    """The first ``n_windows`` windows of a small synthetic cohort, plus its vocabulary size."""
    ds = D.synth_generate(8, 10, seed=seed)
    vocab = D.SkillVocab.build(ds.interactions)
    windows = D.build_windows(D.group_by_student(ds.interactions, vocab), window)
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(windows), size=n_windows, replace=False))
    return windows[picked], vocab.size


def overfit_config(variant: str, window: int, vocab_size: int, seed: int = 0) -> ModelConfig:
    dense = (8, 4) if variant == BIGRU else (8, 6, 4, 2)
    return ModelConfig.for_variant(variant, window=window, embed_dim=16, skill_vocab_size=vocab_size,
                                   conv_filters=16, gru_units=8, dense_units=dense,
                                   spatial_dropout_rate=0.0, gaussian_dropout_rate=0.0, seed=seed)


def overfit(variant: str, n_windows: int = 64, max_epochs: int = 300, target_auc: float = 0.95,
            lr: float = 0.01, batch_size: int = 16, window: int = 20, seed: int = 0) -> OverfitResult:
    """Train on ``n_windows`` windows until training-set AUC reaches ``target_auc``."""
    windows, vocab_size = overfit_windows(n_windows, window, seed)
    model = KTModel(overfit_config(variant, window, vocab_size, seed))
    cfg = TrainConfig(r_init=lr, schedule_enabled=False, epochs=max_epochs, batch_size=batch_size,
                      optimizer="adam", seed=seed)
    start = time.perf_counter()
    res = train(model, windows, windows, cfg, on_epoch=lambda e: e.val_auc >= target_auc)
    train_auc = auc(model.predict(windows.skills, windows.responses), windows.labels)
    return OverfitResult(variant, len(res.history), train_auc, time.perf_counter() - start, res.history)


@dataclass
class LearnabilityResult:
    ceiling_auc: float
    test_auc: float
    best_epoch: int
    seconds: float
    history: list[EpochLog] = field(repr=False)

    @property
    def gap(self) -> float:
        return self.ceiling_auc - self.test_auc


@dataclass(frozen=True)
class LearnabilitySetup:
    students: int = 500
    skills: int = 20
    params: D.SynthParams = D.SynthParams(learn=0.2, guess=0.2, slip=0.1)
    window: int = 50
    width: int = 16
    epochs: int = 12
    batch_size: int = 64
    lr: float = 0.003
    seed: int = 7


def learnability(setup: LearnabilitySetup = LearnabilitySetup(), on_epoch=None) -> LearnabilityResult:
    """Train a reduced BiGRU on synthetic BKT students; compare held-out AUC with the oracle ceiling.

    The ceiling is the AUC of the generator's own posterior-predictive
    probabilities on the same held-out interactions.
    """
    ds = D.synth_generate(setup.students, setup.skills, setup.params, seed=setup.seed)
    vocab = D.SkillVocab.build(ds.interactions)
    windows = D.build_windows(D.group_by_student(ds.interactions, vocab), setup.window)
    # group_by_student keeps input order, so windows line up with interactions
    windows.extra["oracle"] = ds.oracle_prob
    sp = D.split(list(dict.fromkeys(windows.user_ids)), seed=setup.seed)
    train_users, val_users = sp.folds[0]
    test = windows.for_users(sp.test)
    w = setup.width
    cfg = ModelConfig.for_variant(BIGRU, window=setup.window, embed_dim=w, skill_vocab_size=vocab.size,
                                  conv_filters=w, gru_units=w, dense_units=(w, w // 2), seed=setup.seed)
    model = KTModel(cfg)
    tcfg = TrainConfig.for_variant(BIGRU, epochs=setup.epochs, batch_size=setup.batch_size,
                                   r_init=setup.lr, seed=setup.seed)
    start = time.perf_counter()
    res = train(model, windows.for_users(train_users), windows.for_users(val_users), tcfg, on_epoch=on_epoch)
    return LearnabilityResult(auc(test.extra["oracle"], test.labels), evaluate(model, test).auc,
                              res.best_epoch, time.perf_counter() - start, res.history)


@dataclass
class RecipeResult:
    baseline_accuracy: float
    best_val_auc: float
    test_auc: float
    seconds: float


def real_data_recipe(raw_csv: str | Path, out_dir: str | Path, variant: str = BIGRU, epochs: int = 30,
                     seed: int = 0, skill_column: str = "skill_id") -> RecipeResult:
    """Full-size run on a user-supplied interaction log: clean, split, train, score the test students."""
    from .pipeline import preprocess, run_eval, run_train

    out = Path(out_dir)
    start = time.perf_counter()
    stats = preprocess(raw_csv, out / "data", seed=seed, skill_column=skill_column)
    log.info("baseline accuracy %.4f over %d responses", stats.baseline_accuracy, stats.responses)
    cfg = RunConfig(model=ModelConfig.for_variant(variant, seed=seed),
                    train=TrainConfig.for_variant(variant, epochs=epochs, seed=seed),
                    data=DataConfig(csv=str(out / "data" / "cleaned.csv"), manifests=str(out / "data" / "manifests")),
                    out=str(out / variant), seed=seed)
    outcome = run_train(cfg)
    report = run_eval(out / variant / "checkpoint.bin", cfg.data.csv, out / "data" / "manifests" / "test.txt",
                      out / f"{variant}_eval")
    return RecipeResult(stats.baseline_accuracy, outcome.result.best_val_auc, report.auc,
                        time.perf_counter() - start)
