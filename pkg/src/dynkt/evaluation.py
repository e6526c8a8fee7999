"""AUC, majority baseline, residuals and Welch's two-sample t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = len(xs)
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    ranks_sorted = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    ranks = np.empty(n)
    ranks[order] = ranks_sorted
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + P(tie) / 2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"auc: scores {list(scores.shape)} and labels {list(labels.shape)} must be equal 1-D")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("auc: labels must contain both classes")
    ranks = average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) pairs at every distinct threshold, starting from (0, 0)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) == 1
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    cut = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(y)[cut]
    fp = np.cumsum(~y)[cut]
    return [(0.0, 0.0)] + [(f / max(fp[-1], 1), t / max(tp[-1], 1)) for f, t in zip(fp, tp)]


def baseline_accuracy(labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("baseline_accuracy: no labels")
    ones = float(np.mean(labels == 1))
    return max(ones, 1.0 - ones)


# ---------------------------------------------------------------- t-test

def _betacf(a: float, b: float, x: float, tol: float = 1e-16, max_iter: int = 10_000) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc: a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"betainc: x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if t == 0.0:
        return 1.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float


def t_test(a, b) -> TTestResult:
    """Welch's unequal-variance two-sample t-test, two-sided."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DataError("t_test: each sample needs at least 2 values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise DataError("t_test: both samples have zero variance")
    sa, sb = va / a.size, vb / b.size
    se2 = sa + sb
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    df = float(se2 * se2 / (sa * sa / (a.size - 1) + sb * sb / (b.size - 1)))
    return TTestResult(t, df, t_sf_two_sided(t, df))


# ---------------------------------------------------------------- reports

@dataclass
class EvalReport:
    auc: float
    accuracy: float
    baseline_accuracy: float
    n_examples: int
    scores: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @property
    def residuals(self) -> np.ndarray:
        return self.labels - self.scores

    def to_text(self, extra: dict[str, str] | None = None) -> str:
        lines = [f"{k} = {v}" for k, v in (extra or {}).items()]
        lines += [
            f"auc = {self.auc!r}",
            f"accuracy = {self.accuracy!r}",
            f"baseline_accuracy = {self.baseline_accuracy!r}",
            f"n_examples = {self.n_examples}",
        ]
        return "\n".join(lines) + "\n"

    def write(self, report_path: str | Path, examples_path: str | Path | None = None,
              extra: dict[str, str] | None = None) -> None:
        Path(report_path).write_text(self.to_text(extra), encoding="utf-8")
        if examples_path is not None:
            write_examples(examples_path, self.scores, self.labels)


def report_from_scores(scores, labels) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.size == 0:
        raise DataError("evaluate: empty test set")
    acc = float(np.mean((scores >= 0.5) == (labels == 1)))
    return EvalReport(auc(scores, labels), acc, baseline_accuracy(labels), int(scores.size), scores, labels)


def evaluate(model, windows, batch_size: int = 512) -> EvalReport:
    """Inference over a window set; accuracy uses a 0.5 threshold."""
    if len(windows) == 0:
        raise DataError("evaluate: empty test set")
    scores = model.predict(windows.skills, windows.responses, batch_size=batch_size)
    return report_from_scores(scores, windows.labels)


def write_examples(path: str | Path, scores, labels) -> None:
    """Tab-separated per-example file: score, label, residual."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("score\tlabel\tresidual\n")
        for s, y in zip(scores, labels):
            fh.write(f"{float(s)!r}\t{int(y)}\t{float(y) - float(s)!r}\n")


def read_examples(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:2] != ["score", "label"]:
            raise DataError(f"{path}: not a per-example file (header {header})")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split("\t")
            try:
                scores.append(float(parts[0]))
                labels.append(int(parts[1]))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row") from None
    return np.array(scores), np.array(labels)
