import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dynkt import data as D
from dynkt.errors import DataError
from dynkt.evaluation import (
    EvalReport,
    auc,
    average_ranks,
    baseline_accuracy,
    betainc,
    evaluate,
    read_examples,
    report_from_scores,
    roc_points,
    t_test,
    write_examples,
)

from oracles import auc_pairs, welch_oracle


# ---------------------------------------------------------------- AUC

def test_perfect_ranking():
    assert auc([0.9, 0.1], [1, 0]) == 1.0


def test_all_ties():
    assert auc(np.full(10, 0.3), [0, 1] * 5) == 0.5


def test_single_class_rejected():
    with pytest.raises(DataError, match="both classes"):
        auc([0.2, 0.4], [1, 1])


def test_average_ranks_share_ties():
    np.testing.assert_array_equal(average_ranks([3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0])


def test_random_sets_match_pair_counting():
    rng = np.random.default_rng(0)
    scores = rng.random(200)
    labels = rng.integers(0, 2, 200)
    assert abs(auc(scores, labels) - auc_pairs(scores, labels)) <= 1e-12


labelled = st.integers(2, 80).flatmap(lambda n: st.tuples(
    hnp.arrays(np.float64, n, elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1)),
    hnp.arrays(np.int64, n, elements=st.integers(0, 1)).filter(lambda y: 0 < y.sum() < len(y))))


@settings(max_examples=200, deadline=None)
@given(labelled)
def test_auc_matches_oracle_property(pair):
    scores, labels = pair
    assert abs(auc(scores, labels) - auc_pairs(scores, labels)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(labelled, st.integers(0, 2**32 - 1))
def test_auc_invariant_under_increasing_transform(pair, seed):
    scores, labels = pair
    # random strictly increasing map over the distinct scores, exact in floating point
    distinct = np.unique(scores)
    images = np.cumsum(np.random.default_rng(seed).uniform(0.1, 2.0, len(distinct))) - 5.0
    moved = images[np.searchsorted(distinct, scores)]
    assert abs(auc(moved, labels) - auc(scores, labels)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(labelled)
def test_auc_label_flip_complements(pair):
    scores, labels = pair
    assert abs(auc(scores, labels) + auc(scores, 1 - labels) - 1.0) <= 1e-12


def test_roc_points_end_to_end():
    pts = roc_points([0.9, 0.8, 0.8, 0.1], [1, 0, 1, 0])
    assert pts == [(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]


# ---------------------------------------------------------------- baseline

def test_baseline_accuracy():
    assert baseline_accuracy([1, 1, 0]) == pytest.approx(2 / 3)
    assert baseline_accuracy([1, 1, 1]) == 1.0
    assert baseline_accuracy([0, 0, 1, 0]) == 0.75
    with pytest.raises(DataError):
        baseline_accuracy([])


# ---------------------------------------------------------------- t-test

def test_identical_samples():
    res = t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert res.t_statistic == 0.0 and res.p_value == 1.0


def test_extreme_separation():
    res = t_test([1.0, 2.0, 3.0], [101.0, 102.0, 103.0])
    assert res.p_value < 1e-6 and res.t_statistic < 0


def test_textbook_pair_matches_quadrature_oracle():
    a, b = [2.1, 2.5, 2.3, 2.6], [3.1, 2.9, 3.3]
    res = t_test(a, b)
    t, df, p = welch_oracle(a, b)
    assert abs(res.t_statistic - t) <= 1e-8 * max(1.0, abs(t))
    assert abs(res.degrees_of_freedom - df) <= 1e-8 * df
    assert abs(res.p_value - p) <= 1e-8 * max(p, 1e-300) or abs(res.p_value - p) <= 1e-15


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(2, 30), st.floats(-3, 3), st.floats(0.1, 5), st.integers(0, 2**32 - 1))
def test_t_test_matches_oracle_property(na, nb, shift, scale, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=na), rng.normal(loc=shift, scale=scale, size=nb)
    res = t_test(a, b)
    t, df, p = welch_oracle(a, b)
    assert abs(res.t_statistic - t) <= 1e-8 * max(1.0, abs(t))
    assert abs(res.p_value - p) <= 1e-8 * max(p, 1e-300) or abs(res.p_value - p) <= 1e-15
    assert 0.0 <= res.p_value <= 1.0 and res.degrees_of_freedom > 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_t_test_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=6), rng.normal(1, 2, size=9)
    ab, ba = t_test(a, b), t_test(b, a)
    assert ab.t_statistic == -ba.t_statistic
    assert ab.p_value == ba.p_value and ab.degrees_of_freedom == ba.degrees_of_freedom


def test_t_test_errors():
    with pytest.raises(DataError, match="2 values"):
        t_test([1.0], [1.0, 2.0])
    with pytest.raises(DataError, match="zero variance"):
        t_test([1.0, 1.0], [3.0, 3.0])


def test_t_test_one_constant_sample_still_defined():
    res = t_test([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    t, df, p = welch_oracle([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    assert res.degrees_of_freedom == pytest.approx(df, rel=1e-12)
    assert res.p_value == pytest.approx(p, rel=1e-8)


@pytest.mark.parametrize("a,b,x", [(0.5, 0.5, 0.3), (2.0, 3.0, 0.9), (50.0, 0.5, 0.99), (1.0, 1.0, 0.42)])
def test_betainc_against_mpmath(a, b, x):
    import mpmath
    expected = float(mpmath.betainc(a, b, 0, x, regularized=True))
    assert betainc(a, b, x) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------- reports

class _ConstantModel:
    def __init__(self, value=0.5):
        self.value = value

    def predict(self, skills, responses, batch_size=512):
        return np.full(len(skills), self.value)


def _windows(labels):
    n = len(labels)
    z = np.zeros((n, 4), dtype=np.int64)
    return D.WindowSet(z, z.copy(), np.asarray(labels), np.array(["u"] * n, dtype=object), np.arange(n))


def test_constant_predictor_on_balanced_labels():
    rep = evaluate(_ConstantModel(), _windows([0, 1, 0, 1]))
    assert rep.auc == 0.5 and rep.n_examples == 4
    # 0.5 sits on the threshold and is called correct, so exactly half are right
    assert rep.accuracy == 0.5
    np.testing.assert_array_equal(rep.residuals, [-0.5, 0.5, -0.5, 0.5])


def test_oracle_scores_reproduce_ceiling():
    ds = D.synth_generate(100, 5, seed=4)
    labels = np.array([it.correct for it in ds.interactions])
    rep = report_from_scores(ds.oracle_prob, labels)
    assert abs(rep.auc - auc(ds.oracle_prob, labels)) <= 1e-12
    assert (np.abs(rep.residuals) < 1).all()


def test_permuted_dataset_gives_identical_report():
    rng = np.random.default_rng(1)
    scores, labels = rng.random(50), rng.integers(0, 2, 50)
    perm = rng.permutation(50)
    a, b = report_from_scores(scores, labels), report_from_scores(scores[perm], labels[perm])
    assert a.to_text() == b.to_text()


def test_empty_evaluation_rejected():
    with pytest.raises(DataError):
        evaluate(_ConstantModel(), _windows([]))


def test_examples_file_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    scores, labels = rng.random(20), rng.integers(0, 2, 20)
    write_examples(tmp_path / "ex.tsv", scores, labels)
    s, y = read_examples(tmp_path / "ex.tsv")
    assert s.tobytes() == scores.tobytes()
    np.testing.assert_array_equal(y, labels)
    assert (tmp_path / "ex.tsv").read_text().splitlines()[0] == "score\tlabel\tresidual"


def test_report_text_is_key_value_lines(tmp_path):
    rep = report_from_scores([0.2, 0.7, 0.9], [0, 1, 0])
    rep.write(tmp_path / "r.txt", extra={"seed": "3"})
    lines = (tmp_path / "r.txt").read_text().splitlines()
    assert lines[0] == "seed = 3"
    assert {ln.split(" = ")[0] for ln in lines} == {"seed", "auc", "accuracy", "baseline_accuracy", "n_examples"}
    assert isinstance(rep, EvalReport)
