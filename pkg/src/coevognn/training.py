"""Multi-task co-evolution objective, training loop, and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Optimizer, Tape, Tensor
from .graph import DynamicGraphSequence, epoch_batches, sample_minibatch, sample_negatives_batch, \
    sample_walk_context
from .model import AttentionTrace, ModelParams, activation, generate_sequence
from .rng import child_seed, make_rng

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"COEVOCKP"
CKPT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"loss became {value} at epoch {epoch}")
        self.epoch = epoch


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    S: int = 3
    L: int = 2
    d: int = 32
    alpha: float = 0.5
    Q: int = 5
    learning_rate: float = 0.02
    epochs: int = 50
    batch_size: int = 0              # 0 means every node in one batch
    batch_mode: str = "epoch"        # epoch: permutation cover; sample: independent draws
    aggregator: str = "sage_mean"
    fusion: str = "attention"
    fusion_sigma: str = "relu"
    attr_sigma: str = "relu"
    negative_dist: str = "degree_3_4"
    positive_mode: str = "neighbor"  # or "walk"
    max_positives: int = 10
    sample_sizes: tuple = (10, 5)
    optimizer: str = "adam"
    freeze_aggregator: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.sample_sizes, str):
            self.sample_sizes = tuple(int(x) for x in self.sample_sizes.split(",") if x.strip())
        self.sample_sizes = tuple(int(x) for x in self.sample_sizes)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.S < 1 or self.Q < 1 or self.L < 1 or self.d < 1:
            raise ValueError("S, Q, L and d must be at least 1")
        if self.epochs < 0 or self.batch_size < 0 or self.max_positives < 1:
            raise ValueError("epochs and batch_size must be >= 0, max_positives >= 1")
        if self.batch_mode not in ("epoch", "sample"):
            raise ValueError(f"unknown batch_mode {self.batch_mode!r}")
        if self.positive_mode not in ("neighbor", "walk"):
            raise ValueError(f"unknown positive_mode {self.positive_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sample_sizes"] = list(self.sample_sizes)
        return d

    @classmethod
    def from_mapping(cls, m: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(m) - set(known)
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        kw = {}
        for k, v in m.items():
            default = known[k].default
            if isinstance(default, bool):
                kw[k] = v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kw[k] = int(v)
            elif isinstance(default, float):
                kw[k] = float(v)
            elif isinstance(default, tuple):
                kw[k] = v if not isinstance(v, list) else tuple(v)
            else:
                kw[k] = str(v)
        return cls(**kw)


@dataclass
class EpochLoss:
    epoch: int
    total: float
    attr: float
    struct: float
    seconds: float
    skipped: int = 0


@dataclass
class LossReport:
    epochs: list = field(default_factory=list)

    def write_csv(self, path):
        """Loss per epoch. Wall time is kept out so the file is reproducible."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "total", "attr", "struct", "skipped"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.total), repr(e.attr), repr(e.struct), e.skipped])

    def write_timing_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "seconds"])
            for e in self.epochs:
                w.writerow([e.epoch, f"{e.seconds:.6f}"])

    def totals(self) -> list[float]:
        return [e.total for e in self.epochs]


# -- single-term losses ------------------------------------------------------


def attribute_loss(h: Tensor, x, M: Tensor, sigma: str = "relu") -> Tensor:
    """||sigma(M h) - x||^2 for a (d, 1) embedding and an r-vector of attributes."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    if M.shape[1] != h.shape[0] or M.shape[0] != x.shape[0]:
        raise ad.ShapeError(f"attribute loss: M {M.shape}, h {h.shape}, x {x.shape}")
    pred = activation(sigma, ad.matmul(M, h))
    return ad.sum(ad.square(ad.sub(pred, x)))


def structure_loss(h_v: Tensor, h_u: Tensor, h_negs: Tensor | None) -> Tensor:
    """-log sig(h_v.h_u) - sum_q log sig(-h_v.h_q); ``h_negs`` is (Q, d) or None."""
    pos = ad.sum(ad.mul(h_v, h_u))
    loss = ad.mul(ad.log(ad.sigmoid(pos)), -1.0)
    if h_negs is not None and h_negs.shape[0]:
        neg = ad.matmul(h_negs, ad.reshape(h_v, (-1, 1)))
        loss = ad.sub(loss, ad.sum(ad.log(ad.sigmoid(ad.mul(neg, -1.0)))))
    return loss


# -- batched objective -------------------------------------------------------


@dataclass
class LossParts:
    total: Tensor
    attr: float
    struct: float
    skipped: int


def _sample_pairs(seq: DynamicGraphSequence, batch: np.ndarray, config: TrainConfig, rng, T: int):
    """Positive (t, v, u) triples and their negatives for steps 1..T."""
    ts, vs, us, negs, skipped = [], [], [], [], 0
    for t in range(1, T + 1):
        g = seq.graphs[t]
        owners = []
        for v in batch:
            if config.positive_mode == "walk":
                ctx = [sample_walk_context(g, int(v), rng) for _ in range(config.max_positives)]
                picked = np.array([u for u in ctx if u is not None], dtype=np.int64)
            else:
                nb = g.neighbors(v)
                if nb.size > config.max_positives:
                    picked = np.sort(rng.choice(nb, size=config.max_positives, replace=False))
                else:
                    picked = nb
            if picked.size == 0:
                skipped += 1
                continue
            owners.append(np.full(picked.size, v))
            us.append(picked)
        if owners:
            owners = np.concatenate(owners)
            ts.append(np.full(owners.size, t))
            vs.append(owners)
            negs.append(sample_negatives_batch(g, owners, config.Q, config.negative_dist, rng))
    if not ts:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, np.zeros((0, config.Q), dtype=np.int64), skipped
    return (np.concatenate(ts), np.concatenate(vs), np.concatenate(us).astype(np.int64),
            np.concatenate(negs, axis=0), skipped)


def overall_loss(seq: DynamicGraphSequence, params: ModelParams, batch, config: TrainConfig,
                 rng, alpha: float | None = None) -> LossParts:
    """alpha * sum attribute terms + (1 - alpha) * sum structure terms over t = 1..T, v in batch.

    Every (v, t) contributes one attribute term and, unless v is isolated at
    t, a structure term per sampled positive with Q fresh negatives each.
    """
    alpha = config.alpha if alpha is None else alpha
    rng = make_rng(rng)
    T = seq.T
    batch = np.unique(np.asarray(batch, dtype=np.int64))
    sample_key = child_seed(rng)
    pt, pv, pu, pn, skipped = _sample_pairs(seq, batch, config, rng, T)
    nodes = np.unique(np.concatenate([batch, pu, pn.reshape(-1)]))
    history, _ = generate_sequence(seq, params, nodes, sample_key, horizon=T)
    m, d = nodes.size, params.d
    H = ad.reshape(ad.stack(history[1:], axis=0), (T * m, d))  # row (t-1)*m + i

    bpos = np.searchsorted(nodes, batch)
    rows = (np.arange(T)[:, None] * m + bpos[None, :]).reshape(-1)
    Hb = ad.take(H, rows)
    X = np.concatenate([seq.attributes[t].dense()[batch] for t in range(1, T + 1)], axis=0)
    pred = activation(config.attr_sigma, ad.matmul(Hb, ad.transpose(params.M)))
    attr = ad.sum(ad.square(ad.sub(pred, X)))

    if pt.size:
        base = (pt - 1) * m
        hv = ad.take(H, base + np.searchsorted(nodes, pv))
        hu = ad.take(H, base + np.searchsorted(nodes, pu))
        hn = ad.take(H, base[:, None] + np.searchsorted(nodes, pn))  # (P, Q, d)
        pos = ad.sum(ad.mul(hv, hu), axis=-1)
        neg = ad.sum(ad.mul(ad.reshape(hv, (pt.size, 1, d)), hn), axis=-1)
        struct = ad.sub(ad.mul(ad.sum(ad.log(ad.sigmoid(pos))), -1.0),
                        ad.sum(ad.log(ad.sigmoid(ad.mul(neg, -1.0)))))
    else:
        struct = Tensor(0.0)
    total = ad.add(ad.mul(attr, alpha), ad.mul(struct, 1.0 - alpha))
    return LossParts(total, float(attr.data), float(struct.data), skipped)


# -- training loop -----------------------------------------------------------


def init_model(seq: DynamicGraphSequence, config: TrainConfig) -> ModelParams:
    rng = make_rng([config.seed, 1])
    return ModelParams.init(seq.r, config.d, config.L, config.S, config.aggregator, rng,
                            fusion=config.fusion, fusion_sigma=config.fusion_sigma,
                            sample_sizes=config.sample_sizes)


def trainable(params: ModelParams, config: TrainConfig) -> list[Tensor]:
    return params.tensors(include_aggregator=not config.freeze_aggregator)


@dataclass
class TrainResult:
    params: ModelParams
    report: LossReport
    trace: AttentionTrace
    steps: int = 0


def train(seq: DynamicGraphSequence, config: TrainConfig, params: ModelParams | None = None,
          on_epoch=None) -> TrainResult:
    """Fit the model on transitions 1..T of ``seq``; deterministic given ``config.seed``."""
    if seq.T < 1:
        raise ValueError("training needs at least two snapshots")
    params = params or init_model(seq, config)
    rng = make_rng([config.seed, 2])
    opt = Optimizer(config.optimizer, config.learning_rate)
    wrt = trainable(params, config)
    batch_size = config.batch_size or seq.n
    report = LossReport()
    steps = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        if config.batch_mode == "epoch":
            batches = epoch_batches(seq.n, batch_size, rng)
        else:
            batches = [sample_minibatch(seq.n, batch_size, rng)
                       for _ in range(math.ceil(seq.n / batch_size))]
        tot = att = st = 0.0
        skipped = 0
        for batch in batches:
            with Tape() as tape:
                parts = overall_loss(seq, params, batch, config, rng)
            value = float(parts.total.data)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, value)
            grads = tape.backward(parts.total, wrt)
            opt.step(wrt, grads)
            steps += 1
            if not ad.parameters_finite(wrt):
                raise TrainingDiverged(epoch, float("nan"))
            tot += value
            att += parts.attr
            st += parts.struct
            skipped += parts.skipped
        entry = EpochLoss(epoch, tot, att, st, time.perf_counter() - start, skipped)
        report.epochs.append(entry)
        logger.info("epoch %d total=%.6g attr=%.6g struct=%.6g (%.2fs)",
                    epoch, tot, att, st, entry.seconds)
        if on_epoch is not None:
            on_epoch(entry)
    _, trace = generate_sequence(seq, params, None, sample_key=config.seed)
    return TrainResult(params, report, trace, steps)


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(params: ModelParams, config: TrainConfig, path, r: int | None = None,
                    step: int = 0, meta: dict | None = None):
    named = params.named_tensors()
    table, offset = [], 0
    for name, t in named:
        table.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.data.size
    header = {"version": CKPT_VERSION, "config": config.to_dict(), "seed": config.seed,
              "step": step, "r": params.M.shape[0] if r is None else r, "tensors": table,
              "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelParams, TrainConfig, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    try:
        header = json.loads(data[20:20 + hlen])
        config = TrainConfig.from_mapping(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint header ({exc})") from exc
    params = ModelParams.init(header["r"], config.d, config.L, config.S, config.aggregator,
                              make_rng(0), fusion=config.fusion, fusion_sigma=config.fusion_sigma,
                              sample_sizes=config.sample_sizes)
    by_name = dict(params.named_tensors())
    base = 20 + hlen
    for entry in header["tensors"]:
        t = by_name.pop(entry["name"], None)
        shape = tuple(entry["shape"])
        if t is None or t.shape != shape:
            raise CheckpointError(f"{path}: unexpected tensor {entry['name']} {shape}")
        count = int(np.prod(shape))
        if base + 8 * (entry["offset"] + count) > len(data):
            raise CheckpointError(f"{path}: truncated tensor data")
        t.data = np.frombuffer(data, dtype="<f8", count=count,
                               offset=base + 8 * entry["offset"]).astype(np.float64).reshape(shape)
    if by_name:
        raise CheckpointError(f"{path}: missing tensors {sorted(by_name)}")
    return params, config, {"step": header["step"], "seed": header["seed"],
                            "meta": header.get("meta", {})}
