"""Seeded generator of co-evolving attributed graph sequences.

Each snapshot t > 0 is derived from earlier snapshots:

* every node picks a source lag s with probability ``lag_weights[s-1]``
  (otherwise s = 1) and copies its attribute row from t - s, then drifts:
  nonzero values are jittered and, with probability ``drift_rate``, the node
  adopts one attribute of a neighbor it had at t - s and drops one of its own;
* each edge of t - 1 survives with probability ``1 - death_rate``;
* for each lag s, ``round(lag_weights[s-1] * target_edges)`` edges join the
  most attribute-cosine-similar node pairs measured at t - s;
* ``round(closure_rate * target_edges)`` edges close open triads of t - s,
  with s drawn from the normalized lag profile.

Lags reaching before t = 0 read from independent random pre-history
snapshots, so a pure lag-s profile splits the sequence into s unrelated
chains. With every rate zero the sequence is frozen at its first snapshot.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import AttributeMatrix, DynamicGraphSequence, SnapshotGraph
from .rng import make_rng


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 30
    T: int = 8
    r: int = 8
    seed: int = 0
    lag_weights: tuple = (0.5,)
    closure_rate: float = 0.1
    drift_rate: float = 0.1
    death_rate: float = 0.5
    avg_degree: float = 4.0
    attrs_per_node: int = 3

    def __post_init__(self):
        object.__setattr__(self, "lag_weights", tuple(float(w) for w in self.lag_weights))
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.T < 0 or self.r < 1:
            raise ValueError("T must be >= 0 and r >= 1")
        if not self.lag_weights or any(w < 0 for w in self.lag_weights) or sum(self.lag_weights) > 1 + 1e-12:
            raise ValueError("lag weights must be non-negative with sum <= 1")
        for name in ("closure_rate", "drift_rate", "death_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.avg_degree < 0 or not 1 <= self.attrs_per_node <= self.r:
            raise ValueError("avg_degree must be >= 0 and 1 <= attrs_per_node <= r")

    @property
    def max_lag(self) -> int:
        return len(self.lag_weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lag_weights"] = list(self.lag_weights)
        return d

    @classmethod
    def from_mapping(cls, m: dict) -> "SyntheticSpec":
        kw = dict(m)
        lw = kw.get("lag_weights")
        if isinstance(lw, str):
            kw["lag_weights"] = tuple(float(x) for x in lw.replace(" ", "").split(",") if x)
        casts = {"n": int, "T": int, "r": int, "seed": int, "attrs_per_node": int,
                 "closure_rate": float, "drift_rate": float, "death_rate": float, "avg_degree": float}
        unknown = set(kw) - set(casts) - {"lag_weights"}
        if unknown:
            raise ValueError(f"unknown synthetic keys: {sorted(unknown)}")
        for k, f in casts.items():
            if k in kw:
                kw[k] = f(kw[k])
        return cls(**kw)


@dataclass
class _State:
    X: np.ndarray
    edges: set = field(default_factory=set)
    nbrs: list = field(default_factory=list)


def _neighbors(n, edges):
    nb = [[] for _ in range(n)]
    for u, v in sorted(edges):
        nb[u].append(v)
        nb[v].append(u)
    return nb


def _random_state(spec: SyntheticSpec, rng, target_edges: int) -> _State:
    n, r = spec.n, spec.r
    X = np.zeros((n, r))
    for v in range(n):
        cols = rng.choice(r, size=spec.attrs_per_node, replace=False)
        X[v, cols] = rng.integers(1, 4, size=cols.size).astype(float)
    edges = set()
    max_edges = n * (n - 1) // 2
    goal = min(target_edges, max_edges)
    while len(edges) < goal:
        u, v = rng.integers(n, size=2)
        if u != v:
            edges.add((int(min(u, v)), int(max(u, v))))
    return _State(X, edges, _neighbors(n, edges))


def _top_similar_pairs(X: np.ndarray, count: int, rng) -> list[tuple[int, int]]:
    if count <= 0:
        return []
    norm = np.linalg.norm(X, axis=1)
    norm[norm == 0] = 1.0
    Y = X / norm[:, None]
    sim = Y @ Y.T
    iu, ju = np.triu_indices(X.shape[0], k=1)
    score = sim[iu, ju] + 1e-9 * rng.random(iu.size)
    top = np.argsort(-score, kind="stable")[:count]
    return [(int(iu[k]), int(ju[k])) for k in top]


def _close_triads(state: _State, count: int, rng) -> list[tuple[int, int]]:
    out = []
    hubs = [w for w, nb in enumerate(state.nbrs) if len(nb) >= 2]
    if not hubs:
        return out
    for _ in range(20 * count):
        if len(out) >= count:
            break
        w = hubs[int(rng.integers(len(hubs)))]
        a, b = rng.choice(state.nbrs[w], size=2, replace=False)
        pair = (int(min(a, b)), int(max(a, b)))
        if pair not in state.edges and pair not in out:
            out.append(pair)
    return out


def _step(spec: SyntheticSpec, history: list[_State], rng, target_edges: int) -> _State:
    lags = np.array(spec.lag_weights)
    L = spec.max_lag
    n, r = spec.n, spec.r
    prev = history[-1]
    # per-node source lag; leftover probability mass means persistence (lag 1)
    probs = np.concatenate([lags, [max(0.0, 1.0 - lags.sum())]])
    pick = rng.choice(L + 1, size=n, p=probs / probs.sum())
    src_lag = np.where(pick == L, 1, pick + 1)
    X = np.empty((n, r))
    for v in range(n):
        X[v] = history[-src_lag[v]].X[v]
    if spec.drift_rate > 0:
        nz = X > 0
        X[nz] = np.maximum(0.5, X[nz] * np.exp(spec.drift_rate * rng.standard_normal(int(nz.sum()))))
        for v in range(n):
            if rng.random() >= spec.drift_rate:
                continue
            source = history[-src_lag[v]]
            nb = source.nbrs[v]
            if not nb:
                continue
            u = nb[int(rng.integers(len(nb)))]
            new = np.flatnonzero((source.X[u] > 0) & (X[v] == 0))
            own = np.flatnonzero(X[v] > 0)
            if new.size == 0:
                continue
            a = new[int(rng.integers(new.size))]
            X[v, a] = source.X[u, a]
            if own.size >= spec.attrs_per_node:
                X[v, own[int(rng.integers(own.size))]] = 0.0

    edges = {e for e in sorted(prev.edges) if rng.random() >= spec.death_rate}
    for s in range(1, L + 1):
        edges.update(_top_similar_pairs(history[-s].X, int(round(lags[s - 1] * target_edges)), rng))
    n_close = int(round(spec.closure_rate * target_edges))
    if n_close:
        if lags.sum() > 0:
            s = int(rng.choice(L, p=lags / lags.sum())) + 1
        else:
            s = 1
        edges.update(_close_triads(history[-s], n_close, rng))
    return _State(X, edges, _neighbors(n, edges))


def generate_synthetic(spec: SyntheticSpec) -> DynamicGraphSequence:
    rng = make_rng(spec.seed)
    target_edges = int(round(spec.avg_degree * spec.n / 2))
    history = [_random_state(spec, rng, target_edges) for _ in range(spec.max_lag)]
    out = [history[-1]]
    for _ in range(spec.T):
        state = _step(spec, history, rng, target_edges)
        history = history[1:] + [state]
        out.append(state)
    graphs, attrs = [], []
    for t, st in enumerate(out):
        pairs = np.array(sorted(st.edges), dtype=np.int64).reshape(-1, 2)
        graphs.append(SnapshotGraph(spec.n, pairs[:, 0], pairs[:, 1], t=t))
        attrs.append(AttributeMatrix.from_dense(st.X))
    return DynamicGraphSequence(graphs, attrs, meta={"synthetic": spec.to_dict()})
