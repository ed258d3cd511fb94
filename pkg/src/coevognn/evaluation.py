"""Forecast metrics and co-evolution diagnostics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import _sigmoid
from .graph import DynamicGraphSequence, SamplingError, SnapshotGraph

logger = logging.getLogger(__name__)

NEAR_ZERO = 0.1


def _decode(H: np.ndarray, M: np.ndarray, sigma: str) -> np.ndarray:
    z = H @ M.T
    if sigma == "relu":
        return np.maximum(z, 0.0)
    if sigma == "sigmoid":
        return _sigmoid(z)
    raise ValueError(f"unknown activation {sigma!r}")


# -- attributes --------------------------------------------------------------


@dataclass
class AttributeEvalReport:
    mae: float
    rmse: float
    subsampled: bool
    kept_near_zero: int
    kept_above_one: int
    count: int

    def __post_init__(self):
        if not (self.mae >= 0 and self.rmse >= self.mae * (1 - 1e-12)):
            raise AssertionError(f"RMSE {self.rmse} below MAE {self.mae}")


def mae_rmse(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    err = np.asarray(pred, dtype=np.float64).ravel() - np.asarray(truth, dtype=np.float64).ravel()
    if err.size == 0:
        return 0.0, 0.0
    a = np.abs(err)
    scale = float(a.max())
    if scale == 0.0 or not np.isfinite(scale):
        return float(np.mean(a)), float(np.sqrt(np.mean(err * err)))
    # scaling keeps tiny or huge errors from under- or overflowing when squared
    return float(np.mean(a)), scale * float(np.sqrt(np.mean((a / scale) ** 2)))


def eval_attributes(H: np.ndarray, M: np.ndarray, sigma: str, X_true: np.ndarray,
                    subsample: bool = True, rng=None, near_zero: float = NEAR_ZERO) -> AttributeEvalReport:
    """MAE/RMSE of decoded attributes against the true matrix.

    With ``subsample`` every prediction above 1 is kept together with an
    equally sized uniform sample of predictions at or below ``near_zero``.
    """
    pred = _decode(np.asarray(H), np.asarray(M), sigma)
    truth = np.asarray(X_true, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} vs truth {truth.shape}")
    p, y = pred.ravel(), truth.ravel()
    if subsample:
        high = np.flatnonzero(p > 1.0)
        low = np.flatnonzero(p <= near_zero)
        if high.size == 0:
            logger.warning("no predictions above 1; evaluating all entries")
        else:
            rng = np.random.default_rng(0) if rng is None else rng
            low = np.sort(rng.choice(low, size=min(high.size, low.size), replace=False))
            keep = np.concatenate([high, low])
            mae, rmse = mae_rmse(p[keep], y[keep])
            return AttributeEvalReport(mae, rmse, True, int(low.size), int(high.size), int(keep.size))
    mae, rmse = mae_rmse(p, y)
    return AttributeEvalReport(mae, rmse, False, 0, 0, int(p.size))


# -- links -------------------------------------------------------------------


def build_link_candidates(g: SnapshotGraph, ratio: float = 1.0, rng=None):
    """All edges of ``g`` labeled 1 plus ``ratio`` times as many sampled non-edges labeled 0.

    Returns (pairs (m, 2) with u < v, labels (m,)).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    pos = g.edge_pairs()
    n = g.n
    non_edges = n * (n - 1) // 2 - pos.shape[0]
    want = int(round(ratio * pos.shape[0]))
    if non_edges <= 0 or want > non_edges:
        raise SamplingError("graph too dense to draw the requested negatives")
    chosen: set[tuple[int, int]] = set()
    existing = g.edge_set()
    while len(chosen) < want:
        uv = rng.integers(n, size=(2 * (want - len(chosen)) + 8, 2))
        for u, v in uv:
            if u == v:
                continue
            pair = (int(min(u, v)), int(max(u, v)))
            if pair in existing or pair in chosen:
                continue
            chosen.add(pair)
            if len(chosen) == want:
                break
    neg = np.array(sorted(chosen), dtype=np.int64).reshape(-1, 2)
    pairs = np.concatenate([pos, neg], axis=0)
    labels = np.concatenate([np.ones(pos.shape[0], dtype=np.int64), np.zeros(neg.shape[0], dtype=np.int64)])
    return pairs, labels


def score_links(H: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """sigmoid(h_u . h_v) for each candidate pair."""
    H = np.asarray(H)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return _sigmoid(np.einsum("ij,ij->i", H[pairs[:, 0]], H[pairs[:, 1]]))


@dataclass
class LinkEvalReport:
    pr_auc: float
    f1: float
    f1_threshold: float
    precision_at: dict
    positives: int
    negatives: int

    def __post_init__(self):
        for v in [self.pr_auc, self.f1, *self.precision_at.values()]:
            if not 0.0 <= v <= 1.0:
                raise AssertionError(f"metric {v} outside [0, 1]")


def pr_points(scores: np.ndarray, labels: np.ndarray):
    """(threshold, tp, fp) at each distinct score, highest threshold first."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp, fp = np.cumsum(y), np.cumsum(~y)
    last = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    return s[last], tp[last], fp[last]


def pr_auc_from_counts(tp, fp, positives: int) -> float:
    prec = [t / (t + f) for t, f in zip(tp.tolist(), fp.tolist())]
    rec = [t / positives for t in tp.tolist()]
    # the curve starts at recall 0 with the precision of the highest threshold
    prev_r, prev_p = 0.0, prec[0]
    terms = []
    for r, p in zip(rec, prec):
        terms.append((r - prev_r) * (p + prev_p) / 2.0)
        prev_r, prev_p = r, p
    return math.fsum(terms)


def link_metrics(scores, labels, ks=(50, 100, 200), f1_mode: str = "best") -> LinkEvalReport:
    """PR-AUC, F1 and precision@k for scored candidate pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    P, N = int(labels.sum()), int((~labels).sum())
    if P == 0 or N == 0:
        raise ValueError("need at least one positive and one negative pair")
    thr, tp, fp = pr_points(scores, labels)
    auc = pr_auc_from_counts(tp, fp, P)
    if f1_mode == "best":
        f1s = [2 * t / (2 * t + f + (P - t)) for t, f in zip(tp.tolist(), fp.tolist())]
        best = int(np.argmax(f1s))
        f1, f1_thr = f1s[best], float(thr[best])
    elif f1_mode == "fixed":
        pred = scores >= 0.5
        t = int((pred & labels).sum())
        f = int((pred & ~labels).sum())
        f1, f1_thr = (2 * t / (2 * t + f + (P - t)) if t else 0.0), 0.5
    else:
        raise ValueError(f"unknown f1_mode {f1_mode!r}")
    order = np.argsort(-scores, kind="stable")
    at = {}
    for k in ks:
        if k > scores.size:
            logger.warning("only %d candidates; omitting P@%d", scores.size, k)
            continue
        at[int(k)] = float(labels[order[:k]].sum() / k)
    return LinkEvalReport(float(auc), float(f1), f1_thr, at, P, N)


# -- co-evolution diagnostics ------------------------------------------------


def _normalize(counts: dict) -> dict:
    total = sum(counts.values())
    if total == 0:
        return {}
    return {k: counts[k] / total for k in sorted(counts)}


def _t_range(seq: DynamicGraphSequence, t_range):
    lo, hi = (1, seq.T) if t_range is None else t_range
    if not 0 <= lo <= hi <= seq.T:
        raise ValueError(f"t_range {lo}..{hi} outside 0..{seq.T}")
    return lo, hi


def link_recurrence_histogram(seq: DynamicGraphSequence, t_range=None) -> dict:
    """Share of recurring edges by the smallest gap to an earlier appearance."""
    lo, hi = _t_range(seq, t_range)
    last_seen: dict = {}
    counts: dict = {}
    for t in range(hi + 1):
        edges = seq.graphs[t].edge_set()
        if t >= lo:
            for e in edges:
                if e in last_seen:
                    delta = t - last_seen[e]
                    counts[delta] = counts.get(delta, 0) + 1
        for e in edges:
            last_seen[e] = t
    return _normalize(counts)


def triad_closure_histogram(seq: DynamicGraphSequence, t_range=None) -> dict:
    """Share of first-time edges by the smallest gap to a snapshot with a common neighbor."""
    lo, hi = _t_range(seq, t_range)
    nbrs = [g.neighbor_sets() for g in seq.graphs[:hi + 1]]
    seen: set = set()
    counts: dict = {}
    for t in range(hi + 1):
        edges = seq.graphs[t].edge_set()
        if t >= lo:
            for u, v in edges:
                if (u, v) in seen:
                    continue
                for delta in range(1, t + 1):
                    nb = nbrs[t - delta]
                    if not nb[u].isdisjoint(nb[v]):
                        counts[delta] = counts.get(delta, 0) + 1
                        break
        seen |= edges
    return _normalize(counts)


def _jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def pearson(x, y) -> float | None:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        return None
    return max(-1.0, min(1.0, float(dx @ dy) / (sx * sy)))


def attribute_structure_correlation(seq: DynamicGraphSequence) -> dict:
    """Per-node Pearson correlation of attribute-set and neighbor-set Jaccard series.

    Nodes whose series have zero variance are left out.
    """
    if seq.T < 2:
        raise ValueError("need T >= 2")
    nbrs = [g.neighbor_sets() for g in seq.graphs]
    out = {}
    for v in range(seq.n):
        ja, js = [], []
        for t in range(1, seq.T + 1):
            ja.append(_jaccard(seq.attributes[t].support(v), seq.attributes[t - 1].support(v)))
            js.append(_jaccard(nbrs[t][v], nbrs[t - 1][v]))
        r = pearson(ja, js)
        if r is not None:
            out[v] = r
    return out


@dataclass
class CoEvolutionReport:
    recurrence: dict
    closure: dict
    correlations: dict = field(default_factory=dict)

    def share_above(self, threshold: float = 0.3) -> float:
        vals = list(self.correlations.values())
        return float(np.mean(np.array(vals) > threshold)) if vals else 0.0


def analyze(seq: DynamicGraphSequence) -> CoEvolutionReport:
    return CoEvolutionReport(link_recurrence_histogram(seq), triad_closure_histogram(seq),
                             attribute_structure_correlation(seq))


# -- emission ----------------------------------------------------------------


def to_json(obj) -> str:
    def conv(o):
        if hasattr(o, "__dataclass_fields__"):
            return {k: conv(v) for k, v in asdict(o).items()}
        if isinstance(o, dict):
            return {str(k): conv(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [conv(v) for v in o]
        if isinstance(o, np.generic):
            return o.item()
        return o

    return json.dumps(conv(obj), indent=2, sort_keys=True)


def to_text(report) -> str:
    rows = []
    for k, v in asdict(report).items():
        if isinstance(v, dict):
            v = ", ".join(f"{a}={b:.4f}" if isinstance(b, float) else f"{a}={b}" for a, b in v.items())
        elif isinstance(v, float):
            v = f"{v:.6f}"
        rows.append((k, str(v)))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def histogram_csv(hist: dict) -> str:
    lines = ["delta,proportion"] + [f"{k},{hist[k]!r}" for k in sorted(hist)]
    return "\n".join(lines) + "\n"
