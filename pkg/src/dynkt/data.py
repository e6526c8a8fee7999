"""Interaction logs: CSV ingestion, cleaning, vocabularies, windows, splits,
pretrained skill vectors and a BKT-style synthetic student generator.

Response tokens fed to the model: 0 = pad, 1 = wrong, 2 = correct.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

PAD = 0
REQUIRED_COLUMNS = ("user_id", "skill_id", "skill_name", "correct")
CSV_COLUMNS = REQUIRED_COLUMNS


def response_token(correct: int) -> int:
    return int(correct) + 1


@dataclass(frozen=True)
class Interaction:
    user_id: str
    skill_id: str
    skill_name: str
    correct: int | None
    order_index: int


# ---------------------------------------------------------------- ingestion

def _parse_correct(raw: str, where: str) -> int | None:
    raw = raw.strip()
    if raw == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"{where}: correct={raw!r} is not 0/1") from None
    if value not in (0.0, 1.0):
        raise DataError(f"{where}: correct={raw!r} is not 0/1")
    return int(value)


def parse_csv(path: str | Path, skill_column: str = "skill_id") -> list[Interaction]:
    """Read an ASSISTments-style log; row order is kept as temporal order.

    ``skill_column`` selects the column used as the vocabulary key; pass a
    question-id column to model questions instead of skills.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [c if c != "skill_id" else skill_column for c in REQUIRED_COLUMNS]
        for col in needed:
            if col not in header:
                raise DataError(f"{path}: missing required column {col!r}")
        rows = []
        for i, row in enumerate(reader):
            where = f"{path}:{i + 2}"
            rows.append(Interaction(
                user_id=row["user_id"] or "",
                skill_id=row[skill_column] or "",
                skill_name=row["skill_name"] or "",
                correct=_parse_correct(row["correct"] or "", where),
                order_index=i,
            ))
    return rows


def write_csv(path: str | Path, interactions: Iterable[Interaction], extra: dict[str, Sequence] | None = None) -> None:
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*CSV_COLUMNS, *extra])
        for i, it in enumerate(interactions):
            correct = "" if it.correct is None else str(it.correct)
            w.writerow([it.user_id, it.skill_id, it.skill_name, correct, *(col[i] for col in extra.values())])


# ---------------------------------------------------------------- cleaning

def merge_composite_skill_ids(raw: str) -> str:
    """"10_13" -> "10": composite ids collapse onto their first component."""
    if raw == "":
        raise DataError("merge_composite_skill_ids: empty skill id")
    return raw.split("_", 1)[0]


DEFAULT_SUBSTITUTIONS: tuple[tuple[str, str], ...] = (
    ("Polnomial", "Polynomial"),
    ("+,-,/,*()", "addition subtraction division multiplication parentheses"),
    (":", " "),
    ("-", " "),
)

_SPACES = re.compile(r"\s+")


def load_substitutions(path: str | Path) -> tuple[tuple[str, str], ...]:
    """Rules file: one ``old => new`` per line, applied in order; ``#`` starts a comment line."""
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if " => " not in line:
                raise DataError(f"{path}:{lineno}: expected 'old => new'")
            old, new = line.split(" => ", 1)
            if old == "":
                raise DataError(f"{path}:{lineno}: empty pattern")
            rules.append((old, new if new.strip() else " "))
    return tuple(rules)


def normalize_skill_name(name: str, substitutions: Sequence[tuple[str, str]] = DEFAULT_SUBSTITUTIONS) -> str:
    for old, new in substitutions:
        name = name.replace(old, new)
    return _SPACES.sub(" ", name).strip()


def drop_missing(interactions: Iterable[Interaction]) -> tuple[list[Interaction], int]:
    kept, dropped = [], 0
    for it in interactions:
        if not it.user_id.strip() or not it.skill_id.strip() or it.correct is None:
            dropped += 1
        else:
            kept.append(it)
    return kept, dropped


@dataclass
class CleanStats:
    rows_in: int
    rows_dropped: int
    students: int
    skills: int
    responses: int
    baseline_accuracy: float

    def to_text(self) -> str:
        return (f"rows_in = {self.rows_in}\nrows_dropped = {self.rows_dropped}\n"
                f"skills = {self.skills}\nstudents = {self.students}\nresponses = {self.responses}\n"
                f"baseline_accuracy = {self.baseline_accuracy:.4f}\n")


def clean(interactions: Sequence[Interaction],
          substitutions: Sequence[tuple[str, str]] = DEFAULT_SUBSTITUTIONS) -> tuple[list[Interaction], CleanStats]:
    """Drop incomplete rows, merge composite ids, normalize names."""
    kept, dropped = drop_missing(interactions)
    out = [Interaction(it.user_id, merge_composite_skill_ids(it.skill_id.strip()),
                       normalize_skill_name(it.skill_name, substitutions), it.correct, it.order_index)
           for it in kept]
    correct = [it.correct for it in out]
    stats = CleanStats(
        rows_in=len(interactions), rows_dropped=dropped,
        students=len({it.user_id for it in out}), skills=len({it.skill_id for it in out}),
        responses=len(out),
        baseline_accuracy=max(np.mean(correct), 1 - np.mean(correct)) if out else 0.0,
    )
    return out, stats


# ---------------------------------------------------------------- vocabulary & sequences

@dataclass
class SkillVocab:
    ids: list[str]
    names: list[str]

    def __post_init__(self):
        self.index = {sid: i + 1 for i, sid in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise DataError("SkillVocab: duplicate skill ids")

    @property
    def size(self) -> int:
        return len(self.ids)

    def lookup(self, skill_id: str) -> int:
        try:
            return self.index[skill_id]
        except KeyError:
            raise DataError(f"unknown skill id {skill_id!r}") from None

    def skill_id(self, index: int) -> str:
        if index < 1:
            raise DataError("index 0 is the pad token")
        return self.ids[index - 1]

    def name(self, index: int) -> str:
        return self.names[index - 1]

    @classmethod
    def build(cls, interactions: Iterable[Interaction]) -> "SkillVocab":
        ids, names, seen = [], [], set()
        for it in interactions:
            if it.skill_id not in seen:
                seen.add(it.skill_id)
                ids.append(it.skill_id)
                names.append(it.skill_name)
        return cls(ids, names)


@dataclass
class StudentSequence:
    user_id: str
    skills: list[int]
    responses: list[int]

    def __len__(self) -> int:
        return len(self.skills)


def group_by_student(interactions: Iterable[Interaction], vocab: SkillVocab) -> list[StudentSequence]:
    """Per-student sequences in order of first appearance, preserving row order."""
    seqs: dict[str, StudentSequence] = {}
    for it in interactions:
        seq = seqs.get(it.user_id)
        if seq is None:
            seq = seqs[it.user_id] = StudentSequence(it.user_id, [], [])
        seq.skills.append(vocab.lookup(it.skill_id))
        seq.responses.append(int(it.correct))
    return list(seqs.values())


# ---------------------------------------------------------------- windows

@dataclass(frozen=True)
class SequenceWindow:
    skills: tuple[int, ...]
    responses: tuple[int, ...]
    label: int


@dataclass
class WindowSet:
    """Column-oriented batch of windows.

    ``position`` is the 0-based index within the student's sequence of the
    interaction whose response is the label.
    """

    skills: np.ndarray
    responses: np.ndarray
    labels: np.ndarray
    user_ids: np.ndarray
    position: np.ndarray
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, idx) -> "WindowSet":
        return WindowSet(self.skills[idx], self.responses[idx], self.labels[idx], self.user_ids[idx],
                         self.position[idx], {k: v[idx] for k, v in self.extra.items()})

    def window(self, i: int) -> SequenceWindow:
        return SequenceWindow(tuple(int(s) for s in self.skills[i]), tuple(int(r) for r in self.responses[i]),
                              int(self.labels[i]))

    def for_users(self, users: Iterable[str]) -> "WindowSet":
        return self[np.isin(self.user_ids, list(users))]

    @classmethod
    def concatenate(cls, parts: Sequence["WindowSet"], window: int) -> "WindowSet":
        if not parts:
            empty = np.zeros((0, window), dtype=np.int64)
            return cls(empty, empty.copy(), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=object),
                       np.zeros(0, dtype=np.int64))
        keys = parts[0].extra.keys()
        return cls(np.concatenate([p.skills for p in parts]), np.concatenate([p.responses for p in parts]),
                   np.concatenate([p.labels for p in parts]), np.concatenate([p.user_ids for p in parts]),
                   np.concatenate([p.position for p in parts]),
                   {k: np.concatenate([p.extra[k] for p in parts]) for k in keys})


def windowize(seq: StudentSequence, L: int) -> WindowSet:
    """One window per interaction t: the last ``L`` skills ending at q_t and the
    previous ``L - 1`` responses, left-padded, with one leading pad so both
    rows have length ``L``."""
    if L < 2:
        raise ValueError(f"window length must be >= 2, got {L}")
    n = len(seq)
    if n == 0:
        raise DataError(f"student {seq.user_id!r}: empty sequence")
    q = np.asarray(seq.skills, dtype=np.int64)
    r = np.asarray([response_token(c) for c in seq.responses], dtype=np.int64)
    # padded[k] holds interaction k - (L - 1); pad for negative positions
    q_pad = np.concatenate([np.zeros(L - 1, dtype=np.int64), q])
    r_pad = np.concatenate([np.zeros(L, dtype=np.int64), r])
    t = np.arange(n)
    cols = np.arange(L)
    skills = q_pad[t[:, None] + cols[None, :]]
    # responses[j] is r at interaction t - L + j, i.e. one step behind skills[j]
    responses = r_pad[t[:, None] + cols[None, :]]
    responses[:, 0] = PAD
    labels = np.asarray(seq.responses, dtype=np.int64)
    return WindowSet(skills, responses, labels, np.full(n, seq.user_id, dtype=object), t)


def build_windows(sequences: Sequence[StudentSequence], L: int) -> WindowSet:
    return WindowSet.concatenate([windowize(s, L) for s in sequences], L)


# ---------------------------------------------------------------- splits

@dataclass
class Split:
    train: list[str]
    test: list[str]
    folds: list[tuple[list[str], list[str]]]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_ids(out / "train.txt", self.train)
        _write_ids(out / "test.txt", self.test)
        for k, (tr, va) in enumerate(self.folds):
            _write_ids(out / f"fold{k}_train.txt", tr)
            _write_ids(out / f"fold{k}_val.txt", va)

    @classmethod
    def read(cls, out_dir: str | Path) -> "Split":
        out = Path(out_dir)
        folds = []
        k = 0
        while (out / f"fold{k}_train.txt").exists():
            folds.append((read_manifest(out / f"fold{k}_train.txt"), read_manifest(out / f"fold{k}_val.txt")))
            k += 1
        return cls(read_manifest(out / "train.txt"), read_manifest(out / "test.txt"), folds)


def _write_ids(path: Path, ids: Sequence[str]) -> None:
    path.write_text("".join(f"{u}\n" for u in ids), encoding="utf-8")


def read_manifest(path: str | Path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    return [line for line in text.split("\n") if line]


def split(user_ids: Sequence[str], seed: int, test_fraction: float = 0.3, n_folds: int = 5) -> Split:
    """Student-level 70/30 train/test split, then ``n_folds`` disjoint validation folds."""
    users = list(dict.fromkeys(user_ids))
    if len(users) < 10:
        raise DataError(f"split: need at least 10 students, got {len(users)}")
    rng = np.random.default_rng(seed)
    perm = [users[i] for i in rng.permutation(len(users))]
    n_test = int(round(test_fraction * len(users)))
    test, train = perm[:n_test], perm[n_test:]
    chunks = np.array_split(np.arange(len(train)), n_folds)
    folds = []
    for chunk in chunks:
        held = set(chunk.tolist())
        folds.append(([u for i, u in enumerate(train) if i not in held], [train[i] for i in chunk]))
    return Split(train, test, folds)


# ---------------------------------------------------------------- pretrained vectors

def read_word_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Whitespace-separated text vectors; an optional ``count dim`` header line is skipped."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            token, values = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric vector entry") from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DataError(f"{path}:{lineno}: dimension {len(vec)} != {dim}")
            vectors[token] = vec
    return vectors


def load_pretrained_skill_vectors(path: str | Path, vocab: SkillVocab, method: str, dim: int,
                                  rng: np.random.Generator | None = None,
                                  fallback_scale: float = 0.05) -> np.ndarray:
    """Initial ``[m + 1, dim]`` skill table from word vectors of each skill name.

    Words are combined by ``sum`` or ``mean``; unknown words are skipped and
    names with no known word get a uniform random row.
    """
    if method not in ("sum", "mean"):
        raise ValueError(f"method must be 'sum' or 'mean', got {method!r}")
    words = read_word_vectors(path)
    if words:
        got = len(next(iter(words.values())))
        if got != dim:
            raise DataError(f"word vectors have dimension {got}, model expects {dim}")
    lower = {}
    for token, vec in words.items():
        lower.setdefault(token.lower(), vec)
    rng = rng or np.random.default_rng(0)
    table = np.zeros((vocab.size + 1, dim))
    for idx in range(1, vocab.size + 1):
        found = []
        for token in vocab.name(idx).split():
            vec = words.get(token)
            if vec is None:
                vec = lower.get(token.lower())
            if vec is not None:
                found.append(vec)
        if found:
            stacked = np.stack(found)
            table[idx] = stacked.sum(axis=0) if method == "sum" else stacked.mean(axis=0)
        else:
            log.warning("skill %r (%r): no pretrained words, random init", vocab.skill_id(idx), vocab.name(idx))
            table[idx] = rng.uniform(-fallback_scale, fallback_scale, size=dim)
    return table


# ---------------------------------------------------------------- synthetic students

@dataclass(frozen=True)
class SynthParams:
    learn: float = 0.2
    guess: float = 0.2
    slip: float = 0.1
    p_init: float = 0.2
    min_length: int = 30
    max_length: int = 60
    min_run: int = 3
    max_run: int = 8

    def validate(self) -> "SynthParams":
        for name in ("learn", "guess", "slip", "p_init"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"synth: {name}={v} must be a probability")
        if not 1 <= self.min_length <= self.max_length:
            raise DataError("synth: need 1 <= min_length <= max_length")
        if not 1 <= self.min_run <= self.max_run:
            raise DataError("synth: need 1 <= min_run <= max_run")
        return self


@dataclass
class SynthDataset:
    interactions: list[Interaction]
    oracle_prob: np.ndarray
    mastered: np.ndarray

    def write(self, path: str | Path) -> None:
        write_csv(path, self.interactions, extra={
            "oracle_prob": [repr(float(p)) for p in self.oracle_prob],
            "mastered": [str(int(m)) for m in self.mastered],
        })


def synth_generate(num_students: int, num_skills: int, params: SynthParams = SynthParams(),
                   seed: int = 0) -> SynthDataset:
    """Simulate students under a two-state (unmastered/mastered) Markov chain per skill.

    Students practise skills in runs of consecutive attempts. ``oracle_prob``
    is the Bayes-optimal P(correct) given the student's earlier observed
    responses on that skill and the true generator parameters;
    ``mastered`` is the hidden state at each attempt.
    """
    params.validate()
    if num_students < 1 or num_skills < 1:
        raise DataError("synth: need at least one student and one skill")
    rng = np.random.default_rng(seed)
    learn, guess, slip = params.learn, params.guess, params.slip
    interactions, oracle, hidden = [], [], []
    order = 0
    for s in range(num_students):
        user = f"s{s:05d}"
        state = rng.random(num_skills) < params.p_init
        belief = np.full(num_skills, params.p_init)
        length = int(rng.integers(params.min_length, params.max_length + 1))
        produced = 0
        while produced < length:
            skill = int(rng.integers(num_skills))
            run = int(rng.integers(params.min_run, params.max_run + 1))
            for _ in range(min(run, length - produced)):
                p_mastered = belief[skill]
                p_correct = p_mastered * (1.0 - slip) + (1.0 - p_mastered) * guess
                mastered = bool(state[skill])
                correct = int(rng.random() < ((1.0 - slip) if mastered else guess))
                interactions.append(Interaction(user, str(skill + 1), f"Skill {skill + 1}", correct, order))
                oracle.append(p_correct)
                hidden.append(mastered)
                # filter on the observation, then apply the learning transition
                if correct:
                    num, den = p_mastered * (1.0 - slip), p_correct
                else:
                    num, den = p_mastered * slip, 1.0 - p_correct
                post = num / den if den > 0 else p_mastered
                belief[skill] = post + (1.0 - post) * learn
                if not mastered and rng.random() < learn:
                    state[skill] = True
                order += 1
                produced += 1
    return SynthDataset(interactions, np.asarray(oracle), np.asarray(hidden))
