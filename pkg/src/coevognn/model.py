"""Evolutionary embedding generation with S-stack temporal self-attention.

For node v at step t the model looks back ``k = min(t, S)`` snapshots. For
each lag s it takes the structural embedding of v on snapshot t - s (stack s
aggregator) and v's own latent embedding at t - s, scores the pair with the
bilinear energy ``h^T Gamma h_hat``, softmaxes the k energies, pushes each
``[h; h_hat]`` through its stack's weight matrix, and fuses the k results
(attention-weighted sum, elementwise max, or plain mean) before
l2-normalizing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .aggregators import AggregatorParams, aggregate_stacks, glorot
from .autodiff import ContractError, Tensor
from .graph import DynamicGraphSequence

FUSIONS = ("attention", "max", "avg")
SIGMAS = ("relu", "sigmoid")


def activation(name: str, x: Tensor) -> Tensor:
    if name == "relu":
        return ad.relu(x)
    if name == "sigmoid":
        return ad.sigmoid(x)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class ModelParams:
    W: list            # S tensors of shape (d, d + d*L)
    Gamma: Tensor      # (d, d*L)
    M: Tensor          # (r, d)
    agg: AggregatorParams
    fusion: str = "attention"
    fusion_sigma: str = "relu"

    @property
    def S(self) -> int:
        return len(self.W)

    @property
    def d(self) -> int:
        return self.Gamma.shape[0]

    @property
    def L(self) -> int:
        return self.agg.L

    @classmethod
    def init(cls, r: int, d: int, L: int, S: int, kind: str, rng, fusion: str = "attention",
             fusion_sigma: str = "relu", sample_sizes=(10, 5)) -> "ModelParams":
        if fusion not in FUSIONS:
            raise ValueError(f"unknown fusion variant {fusion!r}")
        if fusion_sigma not in SIGMAS:
            raise ValueError(f"unknown activation {fusion_sigma!r}")
        agg = AggregatorParams.init(kind, r, d, L, S, rng, sample_sizes)
        dL = d * L
        W = []
        for s in range(S):
            w = glorot(rng, d, d + dL, name=f"W{s + 1}")
            W.append(w)
        Gamma = glorot(rng, d, dL, name="Gamma")
        M = glorot(rng, r, d, name="M")
        return cls(W, Gamma, M, agg, fusion, fusion_sigma)

    def named_tensors(self, include_aggregator: bool = True) -> list[tuple[str, Tensor]]:
        out = [(w.name, w) for w in self.W] + [("Gamma", self.Gamma), ("M", self.M)]
        if include_aggregator:
            out += self.agg.named_tensors()
        return out

    def tensors(self, include_aggregator: bool = True) -> list[Tensor]:
        return [t for _, t in self.named_tensors(include_aggregator)]


@dataclass
class AttentionTrace:
    """Attention weights and energies per step; arrays are (k, nodes)."""

    nodes: np.ndarray
    weights: dict = field(default_factory=dict)
    energies: dict = field(default_factory=dict)

    def entry(self, v: int, t: int) -> tuple[np.ndarray, np.ndarray]:
        i = int(np.searchsorted(self.nodes, v))
        if i >= self.nodes.size or self.nodes[i] != v:
            raise KeyError(v)
        return self.weights[t][:, i], self.energies[t][:, i]

    def mean_by_stack(self, t_min: int = 1) -> np.ndarray:
        """Mean weight of each stack over all nodes and steps t >= t_min that use it."""
        S = max((w.shape[0] for w in self.weights.values()), default=0)
        sums, counts = np.zeros(S), np.zeros(S)
        for t, w in self.weights.items():
            if t < t_min:
                continue
            k = w.shape[0]
            sums[:k] += w.sum(axis=1)
            counts[:k] += w.shape[1]
        return np.divide(sums, counts, out=np.zeros(S), where=counts > 0)


def pre_attention_energy(h_prev: Tensor, Gamma: Tensor, h_hat: Tensor) -> Tensor:
    """Scalar (1, 1) energy h_prev^T Gamma h_hat for column vectors."""
    if h_prev.shape != (Gamma.shape[0], 1) or h_hat.shape != (Gamma.shape[1], 1):
        raise ad.ShapeError(f"energy: h {h_prev.shape}, Gamma {Gamma.shape}, h_hat {h_hat.shape}")
    return ad.matmul(ad.transpose(h_prev), ad.matmul(Gamma, h_hat))


def init_embeddings(seq: DynamicGraphSequence, params: ModelParams, nodes=None,
                    sample_key: int = 0) -> Tensor:
    """Depth-1 stack-1 aggregation of snapshot 0; rows follow ``nodes``."""
    nodes = np.arange(seq.n) if nodes is None else np.asarray(nodes, dtype=np.int64)
    h = aggregate_stacks(seq.graphs[0], seq.attributes[0].dense(), nodes, params.agg, [0],
                         L=1, sample_key=sample_key)
    return ad.reshape(h, h.shape[1:])


def structural_embeddings(seq: DynamicGraphSequence, params: ModelParams, nodes: np.ndarray,
                          horizon: int, sample_key: int = 0):
    """Structural embeddings needed to generate steps 1..horizon.

    Snapshot tau feeds stacks 1..min(S, horizon - tau). Returns one tensor of
    shape (total stacks, nodes, d*L) and the row offset of each snapshot in it.
    """
    blocks, offsets, pos = [], {}, 0
    for tau in range(min(horizon, len(seq))):
        k = min(params.S, horizon - tau)
        if k < 1:
            continue
        key = (sample_key * 1_000_003 + tau) & 0x7FFFFFFFFFFFFFFF
        blocks.append(aggregate_stacks(seq.graphs[tau], seq.attributes[tau].dense(), nodes,
                                       params.agg, range(k), sample_key=key))
        offsets[tau] = pos
        pos += k
    if not blocks:
        return None, offsets
    return (blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=0)), offsets


def fuse(t: int, history: list, hats: Tensor, offsets: dict, params: ModelParams):
    """Embeddings at step t for every node row; returns (H^t, weights, energies)."""
    if t < 1:
        raise ContractError("fusion starts at t = 1; t = 0 comes from init_embeddings")
    k = min(t, params.S)
    rows = [offsets[t - s] + s - 1 for s in range(1, k + 1)]
    hat = ad.take(hats, rows, axis=0)                                   # (k, m, dL)
    prev = ad.stack([history[t - s] for s in range(1, k + 1)], axis=0)  # (k, m, d)
    energy = ad.sum(ad.mul(prev, ad.matmul(hat, ad.transpose(params.Gamma))), axis=-1)  # (k, m)
    weights = ad.softmax(energy, axis=0)
    W = ad.stack(params.W[:k], axis=0)                                  # (k, d, d+dL)
    Z = activation(params.fusion_sigma,
                   ad.matmul(ad.concat([prev, hat], axis=-1), ad.transpose(W)))
    if params.fusion == "attention":
        fused = ad.sum(ad.mul(ad.reshape(weights, weights.shape + (1,)), Z), axis=0)
    elif params.fusion == "max":
        fused = ad.max(Z, axis=0)
    else:
        fused = ad.mean(Z, axis=0)
    return ad.l2_normalize(fused, axis=-1), weights.data, energy.data


def generate_sequence(seq: DynamicGraphSequence, params: ModelParams, nodes=None,
                      sample_key: int = 0, horizon: int | None = None):
    """Embeddings H^0..H^horizon (default horizon T) for ``nodes``.

    Returns the list of (m, d) tensors and the attention trace. A horizon of
    T + 1 produces the forecast step from observed snapshots only.
    """
    nodes = np.arange(seq.n) if nodes is None else np.unique(np.asarray(nodes, dtype=np.int64))
    horizon = seq.T if horizon is None else horizon
    if horizon > seq.T + 1:
        raise ContractError("only one step beyond the last snapshot can be generated")
    trace = AttentionTrace(nodes)
    history = [init_embeddings(seq, params, nodes, sample_key)]
    if horizon == 0:
        return history, trace
    hats, offsets = structural_embeddings(seq, params, nodes, horizon, sample_key)
    for t in range(1, horizon + 1):
        h, w, e = fuse(t, history, hats, offsets, params)
        history.append(h)
        trace.weights[t] = w
        trace.energies[t] = e
    return history, trace


def fuse_step(v: int, t: int, seq: DynamicGraphSequence, params: ModelParams, sample_key: int = 0):
    """h_v^t as a (d, 1) column plus its (weights, energies) trace entry."""
    if t < 1:
        raise ContractError("fusion starts at t = 1; t = 0 comes from init_embeddings")
    history, trace = generate_sequence(seq, params, [v], sample_key, horizon=t)
    return ad.transpose(history[t]), trace.entry(v, t)


def infer_future(seq: DynamicGraphSequence, params: ModelParams, sample_key: int = 0,
                 nodes=None) -> np.ndarray:
    """Forecast H^{T+1} (rows follow ``nodes``) from snapshots 0..T."""
    history, _ = generate_sequence(seq, params, nodes, sample_key, horizon=seq.T + 1)
    return history[-1].data.copy()
