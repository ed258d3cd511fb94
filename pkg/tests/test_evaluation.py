import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coevognn import evaluation as ev
from coevognn.graph import AttributeMatrix, DynamicGraphSequence, SamplingError, SnapshotGraph
from coevognn.synthetic import SyntheticSpec, generate_synthetic
from oracles import brute_link_metrics


# -- brute-force oracles ------------------------------------------------------

def test_link_metrics_equal_brute_force_on_random_fixtures():
    rng = np.random.default_rng(0)
    for trial in range(50):
        m = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, m)
        labels[0], labels[1] = 1, 0
        scores = np.round(rng.random(m), int(rng.integers(1, 4)))  # forces ties
        rep = ev.link_metrics(scores, labels, ks=(5, 50, 100, 200))
        auc, f1, th, at = brute_link_metrics(scores, labels, ks=(5, 50, 100, 200))
        assert (rep.pr_auc, rep.f1, rep.f1_threshold, rep.precision_at) == (auc, f1, th, at)


def test_four_pair_fixture():
    rep = ev.link_metrics([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0], ks=(1, 2, 4))
    # thresholds 0.9: P=1 R=.5; 0.8: P=.5 R=.5; 0.7: P=2/3 R=1; 0.1: P=.5 R=1
    expected_auc = 0.5 * 1.0 + 0 + 0.5 * (0.5 + 2 / 3) / 2 + 0
    assert rep.pr_auc == pytest.approx(expected_auc, abs=1e-15)
    assert rep.f1 == pytest.approx(0.8) and rep.f1_threshold == 0.7
    assert rep.precision_at == {1: 1.0, 2: 0.5, 4: 0.5}
    assert (rep.pr_auc, rep.f1) == brute_link_metrics([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0])[:2]


def test_perfect_separation():
    scores = np.r_[np.linspace(0.6, 0.9, 30), np.linspace(0.1, 0.4, 70)]
    labels = np.r_[np.ones(30), np.zeros(70)]
    rep = ev.link_metrics(scores, labels, ks=(10, 50, 100))
    assert rep.pr_auc == 1.0 and rep.f1 == 1.0
    assert rep.precision_at == {10: 1.0, 50: 30 / 50, 100: 30 / 100}


def test_all_equal_scores():
    labels = np.r_[np.ones(12), np.zeros(28)]
    rep = ev.link_metrics(np.full(40, 0.5), labels, ks=())
    p = 12 / 40
    assert rep.pr_auc == pytest.approx(p, abs=1e-15)
    assert rep.f1 == pytest.approx(2 * p / (p + 1), abs=1e-15)


def test_p_at_k_omitted_with_warning(caplog):
    rep = ev.link_metrics([0.2, 0.9, 0.4], [0, 1, 1], ks=(2, 50))
    assert rep.precision_at == {2: 1.0}
    assert "omitting P@50" in caplog.text


def test_fixed_threshold_mode():
    rep = ev.link_metrics([0.9, 0.6, 0.4, 0.3], [1, 0, 1, 0], f1_mode="fixed")
    assert rep.f1_threshold == 0.5 and rep.f1 == pytest.approx(0.5)


def test_link_metrics_requires_both_classes():
    with pytest.raises(ValueError):
        ev.link_metrics([0.1, 0.2], [1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=60), st.integers(0, 2 ** 31))
def test_rank_statistics_invariant_under_monotone_transform(raw, seed):
    scores = np.array(raw)
    labels = np.random.default_rng(seed).integers(0, 2, scores.size)
    labels[0], labels[1] = 1, 0
    a = ev.link_metrics(scores, labels, ks=(1, 3))
    # exp of the dense rank: strictly increasing on the observed scores, with no float collisions
    ranks = np.searchsorted(np.unique(scores), scores)
    b = ev.link_metrics(np.exp(ranks / 7.0) * 3 + 1, labels, ks=(1, 3))
    assert (a.pr_auc, a.f1, a.precision_at) == (b.pr_auc, b.f1, b.precision_at)
    assert 0 <= a.pr_auc <= 1 and 0 <= a.f1 <= 1


# -- candidates and scores ----------------------------------------------------

def test_candidates():
    g = SnapshotGraph(8, [0, 1, 2, 3, 4], [1, 2, 3, 4, 5])
    pairs, labels = ev.build_link_candidates(g, 1, np.random.default_rng(0))
    assert pairs.shape == (10, 2) and labels.sum() == 5
    edges = g.edge_set()
    assert all((int(u), int(v)) not in edges for (u, v), y in zip(pairs, labels) if y == 0)
    assert all(u < v for u, v in pairs)
    again, _ = ev.build_link_candidates(g, 1, np.random.default_rng(0))
    assert np.array_equal(pairs, again)
    complete = SnapshotGraph(4, *zip(*itertools.combinations(range(4), 2)))
    with pytest.raises(SamplingError):
        ev.build_link_candidates(complete, 1, np.random.default_rng(0))


def test_score_links_examples():
    H = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    s = ev.score_links(H, np.array([[0, 1], [0, 2], [0, 3], [1, 0]]))
    assert s[0] == pytest.approx(0.7311, abs=1e-4) and s[1] == 0.5
    assert s[2] == pytest.approx(0.2689, abs=1e-4) and s[3] == s[0]


# -- attributes ---------------------------------------------------------------

def test_mae_rmse_examples_and_loop_oracle():
    assert ev.mae_rmse([1, 3], [2, 1]) == (1.5, pytest.approx(math.sqrt(2.5), abs=1e-15))
    assert ev.mae_rmse([1, 2], [1, 2]) == (0.0, 0.0)
    mae, rmse = ev.mae_rmse(np.full(7, 2.5), np.full(7, 2.25))
    assert mae == pytest.approx(0.25, abs=1e-15) and rmse == pytest.approx(0.25, abs=1e-15)
    rng = np.random.default_rng(1)
    p, y = rng.normal(size=50), rng.normal(size=50)
    loop_mae = sum(abs(a - b) for a, b in zip(p, y)) / 50
    loop_rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(p, y)) / 50)
    mae, rmse = ev.mae_rmse(p, y)
    assert abs(mae - loop_mae) <= 1e-12 and abs(rmse - loop_rmse) <= 1e-12


def test_eval_attributes_subsampling_protocol():
    # identity decoder: predictions equal H
    H = np.array([[2.0, 0.0, 0.05], [0.0, 3.0, 0.5], [0.01, 0.0, 0.0]])
    X = np.ones((3, 3))
    rep = ev.eval_attributes(H, np.eye(3), "relu", X, True, np.random.default_rng(0))
    assert rep.subsampled and rep.kept_above_one == 2 and rep.kept_near_zero == 2 and rep.count == 4
    full = ev.eval_attributes(H, np.eye(3), "relu", X, False)
    assert not full.subsampled and full.count == 9
    assert full.mae == pytest.approx(ev.mae_rmse(H, X)[0])


def test_eval_attributes_falls_back_without_large_predictions(caplog):
    H = np.full((2, 2), 0.05)
    rep = ev.eval_attributes(H, np.eye(2), "relu", np.zeros((2, 2)), True)
    assert not rep.subsampled and rep.count == 4 and "evaluating all entries" in caplog.text
    with pytest.raises(ValueError):
        ev.eval_attributes(H, np.eye(2), "relu", np.zeros((3, 2)), True)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40))
def test_rmse_at_least_mae(errs):
    mae, rmse = ev.mae_rmse(np.array(errs), np.zeros(len(errs)))
    assert rmse >= mae * (1 - 1e-12) and mae >= 0
    ev.AttributeEvalReport(mae, rmse, False, 0, 0, len(errs))


# -- diagnostics --------------------------------------------------------------

def seq_from_edges(n, edge_lists, X=None):
    graphs = [SnapshotGraph(n, [e[0] for e in es], [e[1] for e in es], t=t) for t, es in enumerate(edge_lists)]
    attrs = X or [AttributeMatrix(n, 1) for _ in graphs]
    return DynamicGraphSequence(graphs, attrs)


def test_recurrence_examples():
    always = seq_from_edges(3, [[(0, 1)]] * 4)
    assert ev.link_recurrence_histogram(always) == {1: 1.0}
    gap = seq_from_edges(3, [[(0, 1)], [], [], [(0, 1)]])
    assert ev.link_recurrence_histogram(gap) == {3: 1.0}
    assert ev.link_recurrence_histogram(gap, (1, 2)) == {}


def test_closure_examples():
    path = seq_from_edges(3, [[(0, 1), (1, 2)], [(0, 2)]])
    assert ev.triad_closure_histogram(path) == {1: 1.0}
    never = seq_from_edges(4, [[(0, 1)], [(2, 3)]])
    assert ev.triad_closure_histogram(never) == {}


def brute_closure(seq):
    counts = {}
    seen = set()
    for t in range(seq.T + 1):
        E = seq.graphs[t].edge_set()
        if t >= 1:
            for (u, v) in sorted(E - seen):
                for delta in range(1, t + 1):
                    Ep = seq.graphs[t - delta].edge_set()
                    has = lambda a, b: (min(a, b), max(a, b)) in Ep
                    if any(has(u, w) and has(w, v) for w in range(seq.n) if w not in (u, v)):
                        counts[delta] = counts.get(delta, 0) + 1
                        break
        seen |= E
    total = sum(counts.values())
    return {k: c / total for k, c in sorted(counts.items())} if total else {}


def brute_recurrence(seq):
    counts = {}
    for t in range(1, seq.T + 1):
        for e in seq.graphs[t].edge_set():
            for delta in range(1, t + 1):
                if e in seq.graphs[t - delta].edge_set():
                    counts[delta] = counts.get(delta, 0) + 1
                    break
    total = sum(counts.values())
    return {k: c / total for k, c in sorted(counts.items())} if total else {}


@pytest.mark.parametrize("seed", range(5))
def test_histograms_match_brute_force(seed):
    seq = generate_synthetic(SyntheticSpec(n=15, T=6, seed=seed, lag_weights=(0.3, 0.3), closure_rate=0.3))
    rec, clo = ev.link_recurrence_histogram(seq), ev.triad_closure_histogram(seq)
    assert rec == brute_recurrence(seq) and clo == brute_closure(seq)
    for h in (rec, clo):
        assert all(v >= 0 for v in h.values()) and abs(sum(h.values()) - 1) <= 1e-12


def test_correlation_examples():
    n = 2
    # node 0: attribute sets change in step with neighbour sets; node 1 never changes
    X = [AttributeMatrix.from_dense(np.array(m, dtype=float)) for m in
         ([[1, 1, 0, 0], [1, 0, 0, 0]], [[1, 1, 0, 0], [1, 0, 0, 0]], [[1, 0, 0, 0], [1, 0, 0, 0]],
          [[0, 0, 1, 1], [1, 0, 0, 0]])]
    graphs = [[(0, 1)], [(0, 1)], [], []]
    seq = seq_from_edges(n, graphs, X)
    corr = ev.attribute_structure_correlation(seq)
    assert 1 not in corr
    # J_a = (1, 0.5, 0), J_s = (1, 0, 1): direct formula
    ja, js = np.array([1, 0.5, 0]), np.array([1, 0, 1.0])
    ref = ((ja - ja.mean()) @ (js - js.mean())) / math.sqrt(((ja - ja.mean()) ** 2).sum() * ((js - js.mean()) ** 2).sum())
    assert abs(corr[0] - ref) <= 1e-12
    with pytest.raises(ValueError):
        ev.attribute_structure_correlation(seq.slice(0, 1))


def test_pearson_direct_formula_and_degenerate_cases():
    a, b = [1, 0.5, 0.25], [0.9, 0.4, 0.2]
    x, y = np.array(a), np.array(b)
    ref = ((x - x.mean()) * (y - y.mean())).sum() / math.sqrt(((x - x.mean()) ** 2).sum() * ((y - y.mean()) ** 2).sum())
    assert abs(ev.pearson(a, b) - ref) <= 1e-12
    assert ev.pearson([1, 1, 1], [0, 1, 2]) is None
    assert ev.pearson([0.2, 0.5, 0.1], [0.2, 0.5, 0.1]) == pytest.approx(1.0, abs=1e-12)


def test_correlations_in_range(small_seq):
    corr = ev.attribute_structure_correlation(small_seq)
    assert all(-1 <= v <= 1 for v in corr.values())


# -- emission -----------------------------------------------------------------

def test_emitters():
    rep = ev.link_metrics([0.9, 0.2, 0.6], [1, 0, 1], ks=(2,))
    data = json.loads(ev.to_json(rep))
    assert data["precision_at"] == {"2": 1.0} and data["positives"] == 2
    text = ev.to_text(rep)
    assert "pr_auc" in text and "2=1.0000" in text
    assert ev.histogram_csv({2: 0.75, 1: 0.25}) == "delta,proportion\n1,0.25\n2,0.75\n"


def test_report_invariant_guard():
    with pytest.raises(AssertionError):
        ev.AttributeEvalReport(1.0, 0.5, False, 0, 0, 2)
    with pytest.raises(AssertionError):
        ev.LinkEvalReport(1.2, 0.5, 0.5, {}, 1, 1)
