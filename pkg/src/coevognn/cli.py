"""Command-line entry point: ``coevognn <command> ...``.

Exit codes: 0 success, 2 input or config error, 3 training divergence,
4 verification failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import ConfigError, ExperimentConfig, default_config_text, load_config
from .graph import FormatError, SamplingError, load_edge_csv, load_sequence, save_sequence
from .model import infer_future
from .rng import make_rng
from .synthetic import generate_synthetic
from .training import (CheckpointError, TrainingDiverged, init_model, load_checkpoint,
                       save_checkpoint, train)

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4

logger = logging.getLogger("coevognn")


class InputError(Exception):
    pass


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(out_dir: Path, config: dict, seed: int, started: float, files: list[Path],
                   volatile: list[Path] = ()):
    """``files`` are reproducible outputs; ``volatile`` ones (timings) are listed without hashes."""
    manifest = {
        "config": config,
        "seed": seed,
        "git": git_describe(),
        "started": dt.datetime.fromtimestamp(started, dt.timezone.utc).isoformat(),
        "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
        "artifacts": [{"file": p.name, "sha256": sha256(p)} for p in sorted(files)],
        "volatile": sorted(p.name for p in volatile),
    }
    _write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def parse_range(text: str) -> tuple[int, int]:
    try:
        a, b = text.split("..")
        a, b = int(a), int(b)
    except ValueError:
        raise InputError(f"bad range {text!r}; expected a..b") from None
    if a < 0 or b <= a:
        raise InputError(f"range {text!r} must satisfy 0 <= a < b")
    return a, b


def _load_seq(path):
    if not Path(path).is_file():
        raise InputError(f"{path}: no such file")
    return load_sequence(path)


def _config(path) -> ExperimentConfig:
    return ExperimentConfig() if path is None else load_config(path)


# -- commands ----------------------------------------------------------------


def cmd_ingest(args) -> int:
    for p in [args.edges] + ([args.attributes] if args.attributes else []):
        if not Path(p).is_file():
            raise InputError(f"{p}: no such file")
    seq = load_edge_csv(args.edges, window=args.window, explicit_steps=args.explicit_steps,
                        attributes_path=args.attributes)
    save_sequence(seq, args.out)
    counts = [g.num_edges for g in seq.graphs]
    print(f"nodes {seq.n}  attributes {seq.r}  snapshots {len(seq)}  T {seq.T}")
    print(f"edges per snapshot: mean {np.mean(counts):.1f}  min {min(counts)}  max {max(counts)}")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = load_config(args.spec)
    if cfg.synthetic is None:
        raise InputError(f"{args.spec}: missing [synthetic] section")
    seq = generate_synthetic(cfg.synthetic)
    save_sequence(seq, args.out)
    _write_atomic(Path(str(args.out) + ".spec.json"),
                  json.dumps(cfg.synthetic.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out}: nodes {seq.n}  snapshots {len(seq)}")
    return EXIT_OK


def _prefix(seq, holdout: bool):
    """Observed part of ``seq`` (last snapshot held out when asked)."""
    if holdout:
        if seq.T < 2:
            raise InputError(f"need at least 3 snapshots to hold one out, got {len(seq)}")
        return seq.slice(0, seq.T - 1)
    return seq


def cmd_train(args) -> int:
    started = time.time()
    cfg = _config(args.config)
    seq = _prefix(_load_seq(args.data), not args.no_holdout)
    lo, hi = (0, seq.T) if args.train_range is None else parse_range(args.train_range)
    if hi > seq.T:
        raise InputError(f"train range ends at {hi}, last training snapshot is {seq.T}")
    seq = seq.slice(lo, hi)
    logger.info("training on snapshots %d..%d (%d transitions)", lo, hi, seq.T)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(seq, cfg.model)
    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(result.params, cfg.model, ckpt, step=result.steps,
                    meta={"train_range": [lo, hi], "transitions": seq.T})
    loss_csv = out / "loss.csv"
    result.report.write_csv(loss_csv)
    timing_csv = out / "timing.csv"
    result.report.write_timing_csv(timing_csv)
    att = {"mean_by_stack": result.trace.mean_by_stack(1).tolist(),
           "per_step": {str(t): w.mean(axis=1).tolist() for t, w in sorted(result.trace.weights.items())}}
    att_path = out / "attention.json"
    _write_atomic(att_path, json.dumps(att, indent=2, sort_keys=True) + "\n")
    write_manifest(out, {**cfg.to_dict(), "train_range": [lo, hi]}, cfg.model.seed, started,
                   [ckpt, loss_csv, att_path], volatile=[timing_csv])
    last = result.report.epochs[-1] if result.report.epochs else None
    print(f"trained {len(result.report.epochs)} epochs on {seq.T} transitions"
          + (f"; final loss {last.total:.6g}" if last else ""))
    return EXIT_OK


def evaluate_model(full_seq, params, model_cfg, eval_cfg, train_range=None, holdout=True):
    """Forecast the held-out snapshot; returns (AttributeEvalReport, LinkEvalReport)."""
    if holdout:
        if full_seq.T < 2:
            raise InputError(f"need at least 3 snapshots to hold one out, got {len(full_seq)}")
        truth_t = full_seq.T
        observed = full_seq.slice(0, truth_t - 1)
    else:
        truth_t, observed = full_seq.T, full_seq
    if train_range is not None:
        observed = observed.slice(min(train_range[0], observed.T - 1), observed.T)
    H = infer_future(observed, params, sample_key=model_cfg.seed)
    truth_X = full_seq.attributes[truth_t].dense()
    attr = ev.eval_attributes(H, params.M.data, model_cfg.attr_sigma, truth_X, eval_cfg.subsample,
                              make_rng([eval_cfg.seed, 4]), eval_cfg.near_zero)
    pairs, labels = ev.build_link_candidates(full_seq.graphs[truth_t], eval_cfg.negative_ratio,
                                             make_rng([eval_cfg.seed, 3]))
    links = ev.link_metrics(ev.score_links(H, pairs), labels, eval_cfg.ks, eval_cfg.f1_mode)
    return attr, links


def cmd_eval(args) -> int:
    started = time.time()
    cfg = _config(args.config)
    seq = _load_seq(args.data)
    if not Path(args.checkpoint).is_file():
        raise InputError(f"{args.checkpoint}: no such file")
    params, model_cfg, info = load_checkpoint(args.checkpoint)
    train_range = info["meta"].get("train_range")
    attr, links = evaluate_model(seq, params, model_cfg, cfg.eval, train_range, args.holdout_last)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, rep in [("attributes", attr), ("links", links)]:
        p = out / f"{name}.json"
        _write_atomic(p, ev.to_json(rep) + "\n")
        files.append(p)
    text = "[attributes]\n" + ev.to_text(attr) + "\n\n[links]\n" + ev.to_text(links) + "\n"
    if args.random_baseline:
        base_params = init_model(seq, model_cfg)
        b_attr, b_links = evaluate_model(seq, base_params, model_cfg, cfg.eval, train_range,
                                         args.holdout_last)
        rows = ["model,mae,rmse,pr_auc,f1"]
        for label, a, lk in [("trained", attr, links), ("random", b_attr, b_links)]:
            rows.append(f"{label},{a.mae!r},{a.rmse!r},{lk.pr_auc!r},{lk.f1!r}")
        p = out / "comparison.csv"
        _write_atomic(p, "\n".join(rows) + "\n")
        files.append(p)
        text += "\n[comparison]\n" + "\n".join(rows) + "\n"
    p = out / "report.txt"
    _write_atomic(p, text)
    files.append(p)
    write_manifest(out, {**cfg.to_dict(), "checkpoint": str(args.checkpoint)}, model_cfg.seed,
                   started, files)
    print(text, end="")
    return EXIT_OK


def cmd_analyze(args) -> int:
    started = time.time()
    seq = _load_seq(args.data)
    if seq.T < 2:
        raise InputError(f"need T >= 2 for analysis, got T = {seq.T}")
    report = ev.analyze(seq)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "recurrence.csv", out / "closure.csv", out / "correlation.csv", out / "coevolution.json"]
    _write_atomic(files[0], ev.histogram_csv(report.recurrence))
    _write_atomic(files[1], ev.histogram_csv(report.closure))
    _write_atomic(files[2], "node,pearson\n" + "".join(f"{v},{r!r}\n" for v, r in sorted(report.correlations.items())))
    summary = {"recurrence": report.recurrence, "closure": report.closure,
               "correlated_nodes": len(report.correlations),
               "share_above_0.3": report.share_above(0.3)}
    _write_atomic(files[3], ev.to_json(summary) + "\n")
    write_manifest(out, {"data": str(args.data)}, 0, started, files)
    top = max(report.recurrence, key=report.recurrence.get) if report.recurrence else None
    print(f"recurrence mode at delta={top}; {len(report.correlations)} nodes with defined correlation, "
          f"{summary['share_above_0.3']:.1%} above 0.3")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck as gc

    overrides = {}
    if args.config is not None:
        m = load_config(args.config).model
        overrides = {k: getattr(m, k) for k in ("aggregator", "fusion", "fusion_sigma", "attr_sigma",
                                                 "alpha", "negative_dist", "positive_mode", "seed")}
    config = gc.fixture_config(**overrides)
    start = time.perf_counter()
    if args.corrupt_backward:
        with gc.corrupted_backward(args.corrupt_backward):
            report = gc.run_gradcheck(config=config)
    else:
        report = gc.run_gradcheck(config=config)
    for line in report.lines():
        print(line)
    print(f"max relative error {report.max_rel_error:.3e} in {time.perf_counter() - start:.1f}s")
    if not report.passed:
        w = report.worst
        print(f"FAILED: {w.name}{list(w.worst_index)} exceeds {report.tolerance:g}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="coevognn", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Co-evolving attribute and structure embeddings for dynamic graphs.",
        epilog="config keys and defaults:\n\n" + default_config_text())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="bin a timestamped edge list into a sequence file")
    s.add_argument("--edges", required=True)
    s.add_argument("--window", type=float, help="bin width in timestamp units (seconds)")
    s.add_argument("--explicit-steps", action="store_true", help="timestamp column already holds step indices")
    s.add_argument("--attributes", help="t,node,attr_index,value rows; degree features otherwise")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("generate", parents=[common], help="write a synthetic sequence from a [synthetic] config")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("train", parents=[common], help="train a model; the last snapshot is held out")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--train-range", help="inclusive snapshot range a..b inside the training prefix")
    s.add_argument("--no-holdout", action="store_true", help="train on every snapshot")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="forecast the held-out snapshot and score it")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", help="config whose [eval] section is used")
    s.add_argument("--holdout-last", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--random-baseline", action="store_true",
                   help="also score an untrained model with the same config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze", parents=[common], help="link recurrence, triad closure and correlation diagnostics")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all gradients")
    s.add_argument("--config")
    s.add_argument("--corrupt-backward", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InputError, ConfigError, FormatError, CheckpointError, SamplingError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
