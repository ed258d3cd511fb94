"""Central finite-difference check of the full training objective.

Relative error per entry is ``|analytic - numeric| / max(|analytic|, |numeric|, FLOOR)``;
the floor keeps entries whose true gradient is essentially zero from
dividing rounding noise by rounding noise.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .synthetic import SyntheticSpec, generate_synthetic
from .training import TrainConfig, init_model, overall_loss

STEP = 1e-5
FLOOR = 1e-6
TOLERANCE = 1e-3


def fixture_config(**overrides) -> TrainConfig:
    base = dict(S=2, L=2, d=4, Q=2, epochs=1, sample_sizes=(3, 3), seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def fixture_sequence(seed: int = 0):
    return generate_synthetic(SyntheticSpec(n=12, T=4, r=5, seed=seed, attrs_per_node=2,
                                            avg_degree=3.0, lag_weights=(0.5, 0.3)))


@dataclass
class TensorCheck:
    name: str
    size: int
    max_rel_error: float
    worst_index: tuple


@dataclass
class GradcheckReport:
    tensors: list = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    @property
    def worst(self) -> TensorCheck | None:
        return max(self.tensors, key=lambda t: t.max_rel_error, default=None)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def lines(self) -> list[str]:
        out = [f"{t.name:<24} size={t.size:<5} max_rel_error={t.max_rel_error:.3e} at {t.worst_index}"
               for t in self.tensors]
        w = self.worst
        if w is not None:
            out.append(f"worst: {w.name}{list(w.worst_index)} rel_error={w.max_rel_error:.3e} "
                       f"(tolerance {self.tolerance:g})")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def run_gradcheck(seq=None, config: TrainConfig | None = None, step: float = STEP,
                  tolerance: float = TOLERANCE) -> GradcheckReport:
    """Compare tape gradients of the overall loss with central differences for every tensor."""
    seq = fixture_sequence() if seq is None else seq
    config = fixture_config() if config is None else config
    params = init_model(seq, config)
    batch = np.arange(seq.n)
    named = params.named_tensors()

    def loss() -> float:
        # a fresh generator with the same seed pins positives, negatives and samples
        return float(overall_loss(seq, params, batch, config, np.random.default_rng(config.seed)).total.data)

    with Tape() as tape:
        parts = overall_loss(seq, params, batch, config, np.random.default_rng(config.seed))
    grads = tape.backward(parts.total, [t for _, t in named])

    report = GradcheckReport(tolerance=tolerance)
    for (name, t), g in zip(named, grads):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss()
            flat[i] = keep - step
            down = loss()
            flat[i] = keep
            numeric.reshape(-1)[i] = (up - down) / (2 * step)
        err = relative_error(g, numeric)
        idx = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
        report.tensors.append(TensorCheck(name, int(t.data.size), float(err.max(initial=0.0)),
                                          tuple(int(i) for i in idx)))
    return report


def _bad_sigmoid(a):
    s = ad._sigmoid(a.data)
    return ad._emit(s, (a,), lambda g: (g * s,))


@contextlib.contextmanager
def corrupted_backward(op: str = "sigmoid"):
    """Temporarily swap in a wrong backward rule; used as a negative control."""
    if op != "sigmoid":
        raise ValueError(f"no corrupted rule for {op!r}")
    original = ad.sigmoid
    ad.sigmoid = _bad_sigmoid
    try:
        yield
    finally:
        ad.sigmoid = original
