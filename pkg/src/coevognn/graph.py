"""Dynamic attributed graph sequences: storage, ingestion, and sampling."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

SEQ_MAGIC = b"COEVOSEQ"
SEQ_VERSION = 1


class FormatError(ValueError):
    """Malformed input file; the message carries the offending line."""


class SamplingError(RuntimeError):
    pass


def _csr_from_pairs(n: int, rows: np.ndarray, cols: np.ndarray):
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64)


class SnapshotGraph:
    """One time step of the graph.

    Directed edges are kept as given (deduplicated, weights summed) for degree
    features. Neighborhoods are the undirected, self-loop-free view of them,
    stored as CSR with sorted neighbor lists.
    """

    def __init__(self, n: int, src, dst, weight=None, t: int = 0):
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        weight = np.ones(src.shape[0]) if weight is None else np.asarray(weight, dtype=np.float64)
        if src.shape != dst.shape or src.shape != weight.shape:
            raise ValueError("src, dst and weight must have equal length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise ValueError(f"edge endpoint out of range for n={n}")
        self.n = int(n)
        self.t = int(t)
        # merge duplicate directed edges by summing weights
        key = src * n + dst
        uniq, inv = np.unique(key, return_inverse=True)
        self.weight = np.bincount(inv.reshape(-1), weights=weight, minlength=uniq.size)
        self.src = uniq // n if n else uniq
        self.dst = uniq % n if n else uniq
        off = self.src != self.dst
        a = np.concatenate([self.src[off], self.dst[off]])
        b = np.concatenate([self.dst[off], self.src[off]])
        if a.size:
            pair = np.unique(a * n + b)
            a, b = pair // n, pair % n
        self.indptr, self.indices = _csr_from_pairs(self.n, a, b)

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def has_edge(self, u, v) -> np.ndarray:
        return kernels.csr_contains(self.indptr, self.indices, np.atleast_1d(u), np.atleast_1d(v))

    def edge_pairs(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with u < v, sorted."""
        rows = np.repeat(np.arange(self.n), self.degree())
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edge_pairs()}

    def neighbor_sets(self) -> list[set[int]]:
        return [set(self.neighbors(v).tolist()) for v in range(self.n)]

    def __eq__(self, other):
        if not isinstance(other, SnapshotGraph):
            return NotImplemented
        return (self.n == other.n and self.t == other.t
                and np.array_equal(self.src, other.src) and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.weight, other.weight))


class AttributeMatrix:
    """Sparse n x r attribute matrix with at most one entry per (node, attribute)."""

    def __init__(self, n: int, r: int, rows=(), cols=(), vals=()):
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= r):
            raise ValueError(f"attribute index out of bounds for shape ({n}, {r})")
        key = rows * r + cols
        if np.unique(key).size != key.size:
            raise ValueError("duplicate (node, attribute) entries")
        order = np.argsort(key, kind="stable")
        self.n, self.r = int(n), int(r)
        self.rows, self.cols, self.vals = rows[order], cols[order], vals[order]
        self._dense = None

    @classmethod
    def from_dense(cls, X: np.ndarray) -> "AttributeMatrix":
        rows, cols = np.nonzero(X)
        return cls(X.shape[0], X.shape[1], rows, cols, X[rows, cols])

    def dense(self) -> np.ndarray:
        if self._dense is None:
            X = np.zeros((self.n, self.r))
            X[self.rows, self.cols] = self.vals
            X.flags.writeable = False
            self._dense = X
        return self._dense

    def support(self, v: int) -> set[int]:
        lo, hi = np.searchsorted(self.rows, [v, v + 1])
        return set(self.cols[lo:hi][self.vals[lo:hi] != 0].tolist())

    def __eq__(self, other):
        if not isinstance(other, AttributeMatrix):
            return NotImplemented
        return (self.n, self.r) == (other.n, other.r) and np.array_equal(self.dense(), other.dense())


@dataclass
class DynamicGraphSequence:
    graphs: list[SnapshotGraph]
    attributes: list[AttributeMatrix]
    window: float | None = None
    id_map: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.graphs or len(self.graphs) != len(self.attributes):
            raise ValueError("need one attribute matrix per snapshot and at least one snapshot")
        n, r = self.graphs[0].n, self.attributes[0].r
        for t, (g, x) in enumerate(zip(self.graphs, self.attributes)):
            if g.n != n or x.n != n or x.r != r:
                raise ValueError(f"snapshot {t} disagrees on n or r")
            if g.t != t:
                raise ValueError(f"snapshot time indices must be consecutive from 0, got {g.t} at {t}")

    @property
    def n(self) -> int:
        return self.graphs[0].n

    @property
    def r(self) -> int:
        return self.attributes[0].r

    @property
    def T(self) -> int:
        return len(self.graphs) - 1

    def __len__(self):
        return len(self.graphs)

    def slice(self, start: int, stop: int) -> "DynamicGraphSequence":
        """Snapshots start..stop inclusive, re-timed from 0."""
        if not 0 <= start <= stop <= self.T:
            raise ValueError(f"range {start}..{stop} outside 0..{self.T}")
        graphs = [SnapshotGraph(g.n, g.src, g.dst, g.weight, t=i)
                  for i, g in enumerate(self.graphs[start:stop + 1])]
        return DynamicGraphSequence(graphs, self.attributes[start:stop + 1], self.window,
                                    self.id_map, dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, DynamicGraphSequence):
            return NotImplemented
        return (self.graphs == other.graphs and self.attributes == other.attributes
                and self.window == other.window and self.id_map == other.id_map)


# -- ingestion ---------------------------------------------------------------


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _id_sort_key(s: str):
    try:
        return (0, int(s), s)
    except ValueError:
        return (1, 0, s)


def load_edge_csv(path, window: float | None = None, explicit_steps: bool = False,
                  attributes_path=None) -> DynamicGraphSequence:
    """Read ``source,target[,weight],timestamp`` rows into snapshots.

    With ``window`` seconds, rows land in snapshot ``floor((ts - min_ts) / window)``.
    With ``explicit_steps`` the timestamp column already holds the step index.
    Node ids are re-indexed densely in natural sort order; the map is kept on
    the returned sequence. Degree features are attached unless an attribute
    file is given.
    """
    if (window is None) == (not explicit_steps):
        raise ValueError("give exactly one of window or explicit_steps")
    if window is not None and not window > 0:
        raise ValueError("window must be positive")
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            rec = [c.strip() for c in rec]
            if lineno == 1 and not _is_number(rec[-1]):
                continue  # header
            if len(rec) == 4:
                s, d, w, ts = rec
            elif len(rec) == 3:
                s, d, ts = rec
                w = "1.0"
            else:
                raise FormatError(f"{path}:{lineno}: expected 3 or 4 columns, got {len(rec)}")
            try:
                w, ts = float(w), float(ts)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric weight or timestamp") from None
            if not (s and d) or not math.isfinite(ts):
                raise FormatError(f"{path}:{lineno}: bad endpoint or timestamp")
            rows.append((s, d, w, ts))
    if not rows:
        raise FormatError(f"{path}: no edges")
    ids = sorted({r[0] for r in rows} | {r[1] for r in rows}, key=_id_sort_key)
    index = {k: i for i, k in enumerate(ids)}
    src = np.array([index[r[0]] for r in rows], dtype=np.int64)
    dst = np.array([index[r[1]] for r in rows], dtype=np.int64)
    w = np.array([r[2] for r in rows])
    ts = np.array([r[3] for r in rows])
    if explicit_steps:
        if np.any(ts != np.floor(ts)) or ts.min() < 0:
            raise FormatError(f"{path}: explicit steps must be non-negative integers")
        step = ts.astype(np.int64)
    else:
        step = np.floor((ts - ts.min()) / window).astype(np.int64)
    n, steps = len(ids), int(step.max()) + 1
    graphs = [SnapshotGraph(n, src[step == t], dst[step == t], w[step == t], t=t) for t in range(steps)]
    seq = DynamicGraphSequence(graphs, [AttributeMatrix(n, 0) for _ in graphs],
                               window=window, id_map=ids)
    if attributes_path is not None:
        return load_attribute_triplets(attributes_path, seq)
    return attach_degree_features(seq)


def attach_degree_features(seq: DynamicGraphSequence) -> DynamicGraphSequence:
    """Attribute 0 is in-degree, attribute 1 is out-degree, per snapshot."""
    attrs = []
    for g in seq.graphs:
        X = np.zeros((g.n, 2))
        np.add.at(X[:, 0], g.dst, 1.0)
        np.add.at(X[:, 1], g.src, 1.0)
        attrs.append(AttributeMatrix.from_dense(X))
    return DynamicGraphSequence(seq.graphs, attrs, seq.window, seq.id_map, dict(seq.meta))


def load_attribute_triplets(path, seq: DynamicGraphSequence, r: int | None = None) -> DynamicGraphSequence:
    """Fill attributes from ``t,node,attr_index,value`` rows.

    ``node`` is matched against the sequence's id map when it has one. Width
    ``r`` defaults to the largest attribute index plus one. Duplicate rows keep
    the last value.
    """
    path = Path(path)
    index = {k: i for i, k in enumerate(seq.id_map)} if seq.id_map else None
    entries: dict[tuple[int, int, int], float] = {}
    with path.open(newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            rec = [c.strip() for c in rec]
            if lineno == 1 and not _is_number(rec[0]):
                continue
            if len(rec) != 4:
                raise FormatError(f"{path}:{lineno}: expected t,node,attr_index,value")
            try:
                t, a, val = int(rec[0]), int(rec[2]), float(rec[3])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field") from None
            if index is not None:
                if rec[1] not in index:
                    raise FormatError(f"{path}:{lineno}: unknown node {rec[1]!r}")
                v = index[rec[1]]
            else:
                try:
                    v = int(rec[1])
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: non-integer node") from None
            if not 0 <= t <= seq.T:
                raise FormatError(f"{path}:{lineno}: time {t} outside 0..{seq.T}")
            if not 0 <= v < seq.n or a < 0 or (r is not None and a >= r):
                raise FormatError(f"{path}:{lineno}: index out of bounds")
            if (t, v, a) in entries:
                logger.warning("%s:%d: duplicate entry for t=%d node=%s attr=%d; keeping last",
                               path, lineno, t, rec[1], a)
            entries[(t, v, a)] = val
    width = r if r is not None else (max((k[2] for k in entries), default=-1) + 1)
    attrs = []
    for t in range(len(seq)):
        keys = [k for k in entries if k[0] == t]
        attrs.append(AttributeMatrix(seq.n, width, [k[1] for k in keys], [k[2] for k in keys],
                                     [entries[k] for k in keys]))
    return DynamicGraphSequence(seq.graphs, attrs, seq.window, seq.id_map, dict(seq.meta))


# -- canonical on-disk format ------------------------------------------------


def save_sequence(seq: DynamicGraphSequence, path):
    header = {"version": SEQ_VERSION, "n": seq.n, "r": seq.r, "T": seq.T,
              "window": seq.window, "id_map": seq.id_map, "meta": seq.meta}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(SEQ_MAGIC)
        fh.write(struct.pack("<IQ", SEQ_VERSION, len(blob)))
        fh.write(blob)
        for g, x in zip(seq.graphs, seq.attributes):
            fh.write(struct.pack("<Q", g.num_edges))
            fh.write(g.src.astype("<i8").tobytes())
            fh.write(g.dst.astype("<i8").tobytes())
            fh.write(g.weight.astype("<f8").tobytes())
            fh.write(struct.pack("<Q", x.rows.size))
            fh.write(x.rows.astype("<i8").tobytes())
            fh.write(x.cols.astype("<i8").tobytes())
            fh.write(x.vals.astype("<f8").tobytes())
    os.replace(tmp, path)


def load_sequence(path) -> DynamicGraphSequence:
    try:
        return _parse_sequence(path, Path(path).read_bytes())
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: corrupt sequence file ({exc})") from exc


def _parse_sequence(path, data: bytes) -> DynamicGraphSequence:
    if data[:8] != SEQ_MAGIC:
        raise FormatError(f"{path}: not a sequence file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != SEQ_VERSION:
        raise FormatError(f"{path}: unsupported sequence version {version}")
    pos = 8 + 12
    header = json.loads(data[pos:pos + hlen])
    pos += hlen
    n, r = header["n"], header["r"]

    def take(count, dtype):
        nonlocal pos
        if pos + 8 * count > len(data):
            raise FormatError(f"{path}: truncated sequence file")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).copy()
        pos += 8 * count
        return arr

    graphs, attrs = [], []
    for t in range(header["T"] + 1):
        (m,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        src, dst, w = take(m, "<i8"), take(m, "<i8"), take(m, "<f8")
        graphs.append(SnapshotGraph(n, src, dst, w, t=t))
        (k,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        attrs.append(AttributeMatrix(n, r, take(k, "<i8"), take(k, "<i8"), take(k, "<f8")))
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return DynamicGraphSequence(graphs, attrs, header["window"], header["id_map"], header.get("meta", {}))


# -- sampling ----------------------------------------------------------------


def negative_weights(g: SnapshotGraph, distribution: str) -> np.ndarray:
    if distribution == "uniform":
        return np.ones(g.n)
    if distribution == "degree_3_4":
        return (g.degree() + 1.0) ** 0.75
    raise ValueError(f"unknown negative distribution {distribution!r}")


def sample_negatives_batch(g: SnapshotGraph, nodes, Q: int, distribution: str,
                           rng: np.random.Generator, max_rounds: int = 100) -> np.ndarray:
    """Q non-neighbors per node, drawn with replacement from the chosen distribution.

    Candidates that hit the node itself or one of its neighbors are redrawn, at
    most ``max_rounds`` times per slot.
    """
    if Q < 1:
        raise ValueError("Q must be at least 1")
    nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
    deg = g.degree()
    full = deg[nodes] >= g.n - 1
    if np.any(full):
        raise SamplingError(f"node {int(nodes[full][0])} has no non-neighbors at t={g.t}")
    cdf = np.cumsum(negative_weights(g, distribution))
    out = np.full((nodes.size, Q), -1, dtype=np.int64)
    pending = np.arange(out.size)
    owner = np.repeat(nodes, Q)
    for _ in range(max_rounds):
        if pending.size == 0:
            break
        draw = np.searchsorted(cdf, rng.random(pending.size) * cdf[-1], side="right")
        draw = np.minimum(draw, g.n - 1)
        who = owner[pending]
        bad = (draw == who) | g.has_edge(who, draw)
        out.reshape(-1)[pending[~bad]] = draw[~bad]
        pending = pending[bad]
    if pending.size:
        v = int(owner[pending[0]])
        raise SamplingError(f"could not find {Q} non-neighbors of node {v} at t={g.t} "
                            f"after {max_rounds * Q} trials")
    return out


def sample_negatives(g: SnapshotGraph, v: int, Q: int, distribution: str,
                     rng: np.random.Generator) -> np.ndarray:
    return sample_negatives_batch(g, [v], Q, distribution, rng)[0]


def sample_walk_context(g: SnapshotGraph, v: int, rng: np.random.Generator,
                        walk_length: int = 2, window: int = 2) -> int | None:
    """A node co-occurring with ``v`` within ``window`` steps of a random walk from it."""
    path = [v]
    for _ in range(walk_length):
        nb = g.neighbors(path[-1])
        if nb.size == 0:
            break
        path.append(int(nb[rng.integers(nb.size)]))
    ctx = [u for u in path[1:window + 1] if u != v]
    if not ctx:
        return None
    return ctx[int(rng.integers(len(ctx)))]


def sample_minibatch(n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size {batch_size} outside 1..{n}")
    return np.sort(rng.choice(n, size=batch_size, replace=False))


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One random permutation of all nodes cut into consecutive batches."""
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size {batch_size} outside 1..{n}")
    perm = rng.permutation(n)
    return [np.sort(perm[i:i + batch_size]) for i in range(0, n, batch_size)]
