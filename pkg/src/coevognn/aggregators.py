"""Depth-L structural aggregation over one snapshot (GCN, GAT, GraphSAGE-mean).

Each layer maps node states to d dimensions, applies ReLU, and l2-normalizes
per node; the normalized output of every depth is kept and the depths are
concatenated into a ``d * L`` structural embedding.

All temporal stacks that read the same snapshot are evaluated together: node
states carry a leading stack axis ``(k, nodes, features)`` and the sparse
aggregation pattern is shared, so the number of tensor operations per
snapshot does not grow with the number of stacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import CSR, Tensor
from .graph import SnapshotGraph

KINDS = ("gcn", "gat", "sage_mean")

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return x ^ (x >> np.uint64(31))


def node_uniforms(key: int, nodes: np.ndarray, count: int) -> np.ndarray:
    """Uniforms in [0, 1) that depend only on (key, node, slot).

    A node sees the same stream whatever batch it is evaluated in.
    """
    with np.errstate(over="ignore"):
        base = _splitmix64(np.array([key & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
        seeds = _splitmix64(base ^ (np.asarray(nodes, dtype=np.uint64) * np.uint64(0xD1B54A32D192ED03)))
        grid = seeds[:, None] + np.arange(1, count + 1, dtype=np.uint64)[None, :]
        bits = _splitmix64(grid)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def glorot(rng, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=name)


@dataclass
class AggregatorParams:
    kind: str
    r: int
    d: int
    L: int
    weights: list  # [stack][layer] -> Tensor
    attention: list | None = None  # gat only: [stack][layer] -> Tensor (2d,)
    sample_sizes: tuple | None = (10, 5)

    @property
    def S(self) -> int:
        return len(self.weights)

    @classmethod
    def init(cls, kind: str, r: int, d: int, L: int, S: int, rng,
             sample_sizes: tuple | None = (10, 5)) -> "AggregatorParams":
        if kind not in KINDS:
            raise ValueError(f"unknown aggregator kind {kind!r}")
        if L < 1 or S < 1:
            raise ValueError("L and S must be at least 1")
        if sample_sizes is not None:
            sample_sizes = tuple(int(s) for s in sample_sizes)
            if len(sample_sizes) < L:
                sample_sizes = sample_sizes + (sample_sizes[-1],) * (L - len(sample_sizes))
        weights, attention = [], [] if kind == "gat" else None
        for s in range(S):
            ws, att = [], []
            for layer in range(L):
                fan_in = r if layer == 0 else d
                if kind == "sage_mean":
                    fan_in *= 2
                ws.append(glorot(rng, fan_in, d, name=f"agg{s + 1}.layer{layer + 1}.weight"))
                if kind == "gat":
                    att.append(Tensor(rng.uniform(-0.1, 0.1, size=2 * d), requires_grad=True,
                                      name=f"agg{s + 1}.layer{layer + 1}.attention"))
            weights.append(ws)
            if kind == "gat":
                attention.append(att)
        return cls(kind, r, d, L, weights, attention, sample_sizes)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for s in range(self.S):
            for layer in range(self.L):
                w = self.weights[s][layer]
                out.append((w.name, w))
                if self.attention is not None:
                    a = self.attention[s][layer]
                    out.append((a.name, a))
        return out


@dataclass
class LayerPlan:
    targets: np.ndarray      # global ids, sorted
    sources: np.ndarray      # global ids, sorted superset of targets
    self_pos: np.ndarray     # position of each target inside sources
    matrix: CSR              # targets x sources aggregation pattern


def _local(sources: np.ndarray, ids: np.ndarray) -> np.ndarray:
    return np.searchsorted(sources, ids)


def plan_layers(graph: SnapshotGraph, targets, L: int, kind: str,
                sample_sizes: tuple | None, sample_key: int) -> list[LayerPlan]:
    """Receptive-field plan for ``targets``, ordered from layer 1 to layer L."""
    deg = graph.degree()
    plans = []
    tgt = np.unique(np.asarray(targets, dtype=np.int64))
    for layer in range(L, 0, -1):
        rows, cols, vals = [], [], []
        if kind == "sage_mean" and sample_sizes is not None:
            k = sample_sizes[layer - 1]
            u = node_uniforms(sample_key * 7919 + layer, tgt, k)
        for i, v in enumerate(tgt):
            nb = graph.neighbors(v)
            if kind == "sage_mean":
                if nb.size == 0:
                    continue
                if sample_sizes is not None and nb.size > k:
                    picked = nb[np.minimum((u[i] * nb.size).astype(np.int64), nb.size - 1)]
                else:
                    picked = nb
                ids, counts = np.unique(picked, return_counts=True)
                rows.append(np.full(ids.size, i))
                cols.append(ids)
                vals.append(counts / picked.size)
            else:
                ids = np.union1d(nb, [v])
                rows.append(np.full(ids.size, i))
                cols.append(ids)
                if kind == "gcn":
                    vals.append(1.0 / np.sqrt((deg[v] + 1.0) * (deg[ids] + 1.0)))
                else:
                    vals.append(np.zeros(ids.size))
        r = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        c = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        w = np.concatenate(vals) if vals else np.zeros(0)
        src = np.union1d(tgt, c).astype(np.int64)
        indptr = np.zeros(tgt.size + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        matrix = CSR(np.cumsum(indptr), _local(src, c), w, src.size)
        plans.append(LayerPlan(tgt, src, _local(src, tgt), matrix))
        tgt = src
    return plans[::-1]


def _batched_spmm(A: CSR, H: Tensor) -> Tensor:
    """Apply one sparse matrix to every stack of H with shape (k, nodes, f)."""
    k, m, f = H.shape
    flat = ad.reshape(ad.transpose(H, (1, 0, 2)), (m, k * f))
    out = ad.spmm(A, flat)
    return ad.transpose(ad.reshape(out, (A.n_rows, k, f)), (1, 0, 2))


def _layer(kind: str, plan: LayerPlan, H: Tensor, W: Tensor, att: list | None) -> Tensor:
    """One aggregation layer; H is (k, |sources|, f), W is (k, f_in, d)."""
    if kind == "gcn":
        return ad.relu(ad.matmul(_batched_spmm(plan.matrix, H), W))
    if kind == "sage_mean":
        own = ad.take(H, plan.self_pos, axis=1)
        nb = _batched_spmm(plan.matrix, H)
        return ad.relu(ad.matmul(ad.concat([own, nb], axis=-1), W))
    # gat: per-stack attention coefficients over {v} + N(v)
    A = plan.matrix
    Z = ad.matmul(H, W)  # (k, |sources|, d)
    d = Z.shape[-1]
    row_src = plan.self_pos[A.row_ids]
    outs = []
    for s in range(Z.shape[0]):
        z = ad.take(Z, s, axis=0) if Z.shape[0] > 1 else ad.reshape(Z, Z.shape[1:])
        a = att[s]
        left = ad.matmul(z, ad.reshape(ad.take(a, np.arange(d)), (d, 1)))
        right = ad.matmul(z, ad.reshape(ad.take(a, np.arange(d, 2 * d)), (d, 1)))
        left, right = ad.reshape(left, (-1,)), ad.reshape(right, (-1,))
        score = ad.leaky_relu(ad.add(ad.take(left, row_src), ad.take(right, A.indices)), 0.2)
        alpha = ad.segment_softmax(score, A)
        outs.append(ad.relu(ad.spmm_values(A, alpha, z)))
    return ad.stack(outs, axis=0)


def aggregate_stacks(graph: SnapshotGraph, X: np.ndarray, targets, params: AggregatorParams,
                     stacks, L: int | None = None, sample_key: int = 0,
                     plans: list[LayerPlan] | None = None) -> Tensor:
    """Structural embeddings of ``targets`` under each stack in ``stacks``.

    Returns a tensor of shape ``(len(stacks), len(targets), d * L)``; rows
    follow ``targets`` in sorted order. ``stacks`` are zero-based.
    """
    L = params.L if L is None else L
    stacks = list(stacks)
    targets = np.asarray(targets, dtype=np.int64)
    if plans is None:
        plans = plan_layers(graph, targets, L, params.kind, params.sample_sizes, sample_key)
    H = Tensor(X[plans[0].sources][None, :, :])
    depth_outputs = []
    for layer, plan in enumerate(plans):
        W = ad.stack([params.weights[s][layer] for s in stacks], axis=0)
        att = [params.attention[s][layer] for s in stacks] if params.kind == "gat" else None
        H = ad.l2_normalize(_layer(params.kind, plan, H, W, att), axis=-1)
        depth_outputs.append((plan.targets, H))
    final = plans[-1].targets
    blocks = []
    for tgt, out in depth_outputs:
        pos = _local(tgt, final)
        blocks.append(out if tgt.size == final.size else ad.take(out, pos, axis=1))
    hat = blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=-1)
    want = np.unique(targets)
    if want.size != targets.size or not np.array_equal(want, targets):
        hat = ad.take(hat, _local(want, targets), axis=1)
    return hat


def aggregate_batch(nodes, graph: SnapshotGraph, X: np.ndarray, L: int, params: AggregatorParams,
                    stack: int = 0, sample_key: int = 0) -> Tensor:
    """(len(nodes), d * L) structural embeddings under one stack (zero-based)."""
    out = aggregate_stacks(graph, X, nodes, params, [stack], L=L, sample_key=sample_key)
    return ad.reshape(out, out.shape[1:])


def aggregate(v: int, graph: SnapshotGraph, X: np.ndarray, L: int, params: AggregatorParams,
              stack: int = 0, sample_key: int = 0) -> Tensor:
    """Column vector (d * L, 1) for a single node."""
    out = aggregate_batch([v], graph, X, L, params, stack, sample_key)
    return ad.transpose(out)
