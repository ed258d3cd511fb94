"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see the ``verdict`` fixture); the lines
are repeated in the terminal summary. Thresholds here are the contract and
must not be loosened to make a run green.
"""

import gzip
import json
import math
import os
import re
import shutil
import time
import urllib.request
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from coevognn import cli
from coevognn import evaluation as ev
from coevognn.config import EvalConfig
from coevognn.graph import load_edge_csv
from coevognn.model import generate_sequence
from coevognn.synthetic import SyntheticSpec, generate_synthetic
from coevognn.training import TrainConfig, init_model, train
from oracles import brute_link_metrics

SEEDS = (0, 1, 2)


def lag_sequence(seed: int, lag: int, T: int = 20):
    """Attributes and new edges at t depend on snapshot t - lag only."""
    weights = tuple(1.0 if s == lag else 0.0 for s in range(1, max(lag, 3) + 1))
    return generate_synthetic(SyntheticSpec(n=60, T=T, r=16, seed=seed, lag_weights=weights, drift_rate=0.1,
                                            death_rate=1.0, closure_rate=0.0))


def holdout(seq, cfg: TrainConfig, lo: int = 0):
    """Train on snapshots lo..T-1, forecast T; returns (attribute report, link report, train result)."""
    res = train(seq.slice(lo, seq.T - 1), cfg)
    attr, links = cli.evaluate_model(seq, res.params, cfg, EvalConfig(seed=cfg.seed),
                                     train_range=None if lo == 0 else (lo, seq.T - 1))
    return attr, links, res


# -- 1 ------------------------------------------------------------------------

def test_c01_gradient_oracle(verdict, capsys):
    start = time.perf_counter()
    code = cli.main(["gradcheck"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    err = float(re.search(r"max relative error (\S+)", out).group(1))
    ok = code == 0 and err <= 1e-3 and elapsed < 60
    assert verdict(1, ok, f"max rel error {err:.2e} (<= 1e-3), {elapsed:.1f}s (< 60s), exit {code}")


# -- 2 ------------------------------------------------------------------------

def test_c02_attention_invariants(verdict):
    rng = np.random.default_rng(7)
    worst_sum = worst_norm = 0.0
    bad_len = negative = checked = 0
    for trial in range(4):
        S = int(rng.integers(1, 6))
        seq = generate_synthetic(SyntheticSpec(n=40, T=12, r=5, seed=trial))
        params = init_model(seq, TrainConfig(S=S, d=6, seed=trial, sample_sizes=(4, 3)))
        history, trace = generate_sequence(seq, params, sample_key=trial)
        steps = [(int(rng.integers(0, seq.n)), int(rng.integers(1, seq.T + 1))) for _ in range(250)]
        for v, t in steps:
            w, _ = trace.entry(v, t)
            bad_len += w.shape[0] != min(t, S)
            negative += int(np.sum(w < 0))
            worst_sum = max(worst_sum, abs(float(w.sum()) - 1.0))
            worst_norm = max(worst_norm, abs(float(np.linalg.norm(history[t].data[v])) - 1.0))
            checked += 1
    ok = checked == 1000 and bad_len == 0 and negative == 0 and worst_sum <= 1e-9 and worst_norm <= 1e-9
    assert verdict(2, ok, f"{checked} steps, length errors {bad_len}, negative weights {negative}, "
                          f"|sum-1| {worst_sum:.1e}, |norm-1| {worst_norm:.1e} (<= 1e-9)")


# -- 3 ------------------------------------------------------------------------

def test_c03_markov_degeneracy(verdict):
    worst_weight = worst_diff = 0.0
    for seed in SEEDS:
        seq = generate_synthetic(SyntheticSpec(n=30, T=6, r=5, seed=seed))
        params = init_model(seq, TrainConfig(S=1, d=8, seed=seed))
        H = {}
        for fusion in ("attention", "max", "avg"):
            history, trace = generate_sequence(seq, replace(params, fusion=fusion), sample_key=seed)
            H[fusion] = np.stack([h.data for h in history])
            for w in trace.weights.values():
                worst_weight = max(worst_weight, float(np.max(np.abs(w - 1.0))))
        worst_diff = max(worst_diff, float(np.max(np.abs(H["attention"] - H["max"]))),
                         float(np.max(np.abs(H["attention"] - H["avg"]))))
    ok = worst_weight == 0.0 and worst_diff <= 1e-12
    assert verdict(3, ok, f"max |weight-1| {worst_weight:.1e} (== 0), max variant gap {worst_diff:.1e} (<= 1e-12)")


# -- 4 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c04_lag_recovery(verdict):
    seq = lag_sequence(0, lag=2)
    start = time.perf_counter()
    res = train(seq, TrainConfig(S=3, epochs=50, seed=0))
    elapsed = time.perf_counter() - start
    means = res.trace.mean_by_stack(3)
    margin = means[1] - max(means[0], means[2])
    ok = margin >= 0.10 and elapsed < 300
    assert verdict(4, ok, f"stack means {np.round(means, 3).tolist()}, margin {margin:.3f} (>= 0.10), "
                          f"{elapsed:.0f}s (< 300s)")


# -- 5 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c05_span_sweep(verdict):
    wins, rows = 0, []
    for seed in SEEDS:
        seq = lag_sequence(seed, lag=3)
        a1, l1, _ = holdout(seq, TrainConfig(S=1, epochs=50, seed=seed))
        a3, l3, _ = holdout(seq, TrainConfig(S=3, epochs=50, seed=seed))
        won = a3.rmse < a1.rmse and l3.f1 > l1.f1
        wins += won
        rows.append(f"seed {seed}: rmse {a1.rmse:.3f}->{a3.rmse:.3f} f1 {l1.f1:.3f}->{l3.f1:.3f}")
    assert verdict(5, wins >= 2, f"S=3 better on both in {wins}/3 seeds (majority); " + "; ".join(rows))


# -- 6 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c06_ablation_ordering(verdict):
    f1 = {k: [] for k in ("attention", "max", "avg")}
    for seed in SEEDS:
        seq = lag_sequence(seed, lag=2)
        for fusion in f1:
            _, links, _ = holdout(seq, TrainConfig(S=3, epochs=50, seed=seed, fusion=fusion))
            f1[fusion].append(links.f1)
    m = {k: float(np.mean(v)) for k, v in f1.items()}
    ok = m["attention"] >= m["max"] >= m["avg"] - 0.01 and m["attention"] > max(m["max"], m["avg"])
    per_seed = ", ".join(f"{k} {np.round(v, 3).tolist()}" for k, v in f1.items())
    assert verdict(6, ok, f"mean F1 attention {m['attention']:.4f}, max {m['max']:.4f}, avg {m['avg']:.4f} "
                          f"(attention >= max >= avg-0.01, attention best); per seed {per_seed}")


# -- 7 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c07_training_length(verdict):
    wins, rows = 0, []
    for seed in SEEDS:
        seq = lag_sequence(seed, lag=2, T=16)
        cfg = TrainConfig(S=3, epochs=50, seed=seed)
        _, full, _ = holdout(seq, cfg)
        _, short, _ = holdout(seq, cfg, lo=seq.T - 3)
        wins += full.f1 >= short.f1
        rows.append(f"seed {seed}: 15 transitions {full.f1:.3f} vs 2 transitions {short.f1:.3f}")
    assert verdict(7, wins >= 2, f"longer range at least as good in {wins}/3 seeds; " + "; ".join(rows))


# -- 8 ------------------------------------------------------------------------

def epoch_seconds(T: int, S: int, epochs: int = 5) -> float:
    seq = generate_synthetic(SyntheticSpec(n=60, T=T, r=16, seed=0))
    res = train(seq, TrainConfig(S=S, epochs=epochs, seed=0))
    return float(np.median([e.seconds for e in res.report.epochs]))


@pytest.mark.slow
def test_c08_complexity(verdict):
    Ts = np.array([4.0, 8.0, 16.0])
    y = np.array([epoch_seconds(int(T), 3) for T in Ts])
    A = np.column_stack([Ts, np.ones_like(Ts)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r2 = 1.0 - float(np.sum((y - A @ coef) ** 2)) / float(np.sum((y - y.mean()) ** 2))
    by_S = [epoch_seconds(16, S) for S in (1, 2, 4, 8)]
    ratio = max(by_S) / min(by_S)
    ok = r2 >= 0.9 and ratio <= 2.5
    assert verdict(8, ok, f"epoch seconds vs T {np.round(y, 4).tolist()} R^2 {r2:.4f} (>= 0.9); "
                          f"vs S=1,2,4,8 {np.round(by_S, 4).tolist()} ratio {ratio:.2f} (<= 2.5)")


# -- 9 ------------------------------------------------------------------------

def test_c09_metric_oracles(verdict):
    rng = np.random.default_rng(2024)
    link_mismatch = 0
    for _ in range(50):
        m = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, m)
        labels[rng.choice(m, 2, replace=False)] = (1, 0)
        scores = np.round(rng.normal(size=m), int(rng.integers(1, 4)))
        rep = ev.link_metrics(scores, labels, ks=(10, 50, 100, 200))
        link_mismatch += (rep.pr_auc, rep.f1, rep.f1_threshold, rep.precision_at) != \
            brute_link_metrics(scores, labels, ks=(10, 50, 100, 200))
    worst, emissions, inverted = 0.0, 0, 0
    for trial in range(50):
        n, r, d = int(rng.integers(2, 30)), int(rng.integers(1, 8)), int(rng.integers(1, 6))
        H, M = rng.normal(size=(n, d)), rng.normal(size=(r, d)) * rng.uniform(0.1, 3)
        X = np.maximum(rng.normal(size=(n, r)), 0)
        pred = np.maximum(H @ M.T, 0)
        mae = sum(abs(pred[i, j] - X[i, j]) for i in range(n) for j in range(r)) / (n * r)
        rmse = math.sqrt(sum((pred[i, j] - X[i, j]) ** 2 for i in range(n) for j in range(r)) / (n * r))
        full = ev.eval_attributes(H, M, "relu", X, subsample=False)
        worst = max(worst, abs(full.mae - mae), abs(full.rmse - rmse))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for rep in (full, ev.eval_attributes(H, M, "relu", X, rng=np.random.default_rng(trial))):
                emissions += 1
                inverted += rep.rmse < rep.mae
    ok = link_mismatch == 0 and worst <= 1e-12 and inverted == 0
    assert verdict(9, ok, f"link mismatches {link_mismatch}/50 (exact), MAE/RMSE max gap {worst:.1e} (<= 1e-12), "
                          f"RMSE < MAE in {inverted}/{emissions} emissions")


# -- 10 -----------------------------------------------------------------------

def test_c10_convergence(verdict):
    seq = generate_synthetic(SyntheticSpec(n=30, seed=0))
    res = train(seq, TrainConfig(epochs=20, seed=0))
    e = res.report.epochs
    ratio = e[-1].total / e[0].total
    sane = all(math.isfinite(x.attr) and math.isfinite(x.struct) and x.attr >= 0 and x.struct >= 0 for x in e)
    ok = len(e) == 20 and ratio <= 0.9 and sane
    assert verdict(10, ok, f"loss {e[0].total:.1f} -> {e[-1].total:.1f}, ratio {ratio:.3f} (<= 0.9), "
                           f"components finite and non-negative: {sane}")


# -- 11 -----------------------------------------------------------------------

BITCOIN_URL = "https://snap.stanford.edu/data/soc-sign-bitcoinalpha.csv.gz"


def bitcoin_csv(tmp_path: Path) -> Path | None:
    """Local copy from COEVO_BITCOIN_ALPHA, else a download; None when neither works."""
    src = os.environ.get("COEVO_BITCOIN_ALPHA")
    gz = tmp_path / "alpha.csv.gz"
    if src:
        src = Path(src)
        if not src.is_file():
            return None
        if src.suffix != ".gz":
            return src
        shutil.copy(src, gz)
    else:
        try:
            with urllib.request.urlopen(BITCOIN_URL, timeout=20) as resp:
                gz.write_bytes(resp.read())
        except OSError:
            return None
    out = tmp_path / "alpha.csv"
    with gzip.open(gz) as fh:
        out.write_bytes(fh.read())
    return out


@pytest.mark.slow
def test_c11_bitcoin(verdict, tmp_path):
    path = bitcoin_csv(tmp_path)
    if path is None:
        pytest.skip("Bitcoin-Alpha not available (set COEVO_BITCOIN_ALPHA or allow network access)")
    seq = load_edge_csv(path, window=14 * 86400)
    cfg = TrainConfig(aggregator="sage_mean", epochs=int(os.environ.get("COEVO_BITCOIN_EPOCHS", "10")), seed=0)
    res = train(seq.slice(0, seq.T - 1), cfg)
    eval_cfg = EvalConfig(seed=0)
    _, trained = cli.evaluate_model(seq, res.params, cfg, eval_cfg)
    _, random = cli.evaluate_model(seq, init_model(seq, cfg), cfg, eval_cfg)
    ok = len(seq) == 138 and trained.f1 > random.f1 and trained.pr_auc > random.pr_auc
    assert verdict(11, ok, f"{len(seq)} snapshots (== 138); F1 {trained.f1:.4f} vs random {random.f1:.4f}, "
                           f"PR-AUC {trained.pr_auc:.4f} vs random {random.pr_auc:.4f}")


# -- 12 -----------------------------------------------------------------------

def test_c12_determinism(verdict, tmp_path):
    spec = tmp_path / "run.ini"
    spec.write_text("[synthetic]\nn = 25\nT = 5\nr = 6\nseed = 4\n\n"
                    "[model]\nS = 2\nd = 8\nepochs = 4\nseed = 9\n\n[eval]\nks = 5,10\n")

    def run(tag: str) -> dict:
        root = tmp_path / tag
        root.mkdir()
        seq = root / "seq.bin"
        steps = [["generate", "--spec", str(spec), "--out", str(seq)],
                 ["train", "--data", str(seq), "--config", str(spec), "--out", str(root / "train")],
                 ["eval", "--data", str(seq), "--checkpoint", str(root / "train" / "checkpoint.ckpt"),
                  "--config", str(spec), "--out", str(root / "eval")],
                 ["analyze", "--data", str(seq), "--out", str(root / "analyze")]]
        for argv in steps:
            assert cli.main(argv) == 0, argv
        hashes = {"seq.bin": cli.sha256(seq)}
        for sub in ("train", "eval", "analyze"):
            for art in json.loads((root / sub / "manifest.json").read_text())["artifacts"]:
                assert cli.sha256(root / sub / art["file"]) == art["sha256"]
                hashes[f"{sub}/{art['file']}"] = art["sha256"]
        return hashes

    first, second = run("a"), run("b")
    differing = sorted(k for k in first if first[k] != second.get(k))
    ok = first == second and len(first) >= 10
    assert verdict(12, ok, f"{len(first)} artifacts compared by sha256, differing: {differing or 'none'}")
