"""End-to-end experiment runs: data preparation, training loop, evaluation, artifacts."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ExperimentConfig
from .data import (
    BatchSampler,
    ConfigError,
    Dataset,
    DeviceShard,
    Normalizer,
    Schema,
    WeakSupervisionSplit,
    load_csv,
    make_split,
    make_synthetic,
    manifest,
    shard,
)
from .dp import compute_sigma
from .encoder import FeatureLearner
from .metrics import MetricsRecord, auc_pr, auc_roc
from .numerics import derive_rng
from .protocol import Coordinator, EdgeDevice, run_round
from .scorer import MlpScorer
from .wire import MessageBus

log = logging.getLogger(__name__)

CLOUD_ID = 0xFFFF


@dataclass
class Prepared:
    dataset: Dataset
    x: np.ndarray  # normalised with training-split statistics
    split: WeakSupervisionSplit
    shards: list[DeviceShard]
    labeled_anomalies: int


def load_dataset(cfg: ExperimentConfig) -> tuple[Dataset, int]:
    """Return the raw dataset and the labelled-anomaly count to use."""
    if cfg.dataset == "synthetic" and not cfg.data_path:
        s = cfg.synthetic
        ds = make_synthetic(s.d, s.n_normal, s.n_anomaly, cfg.seed, s.separation, s.outlier_fraction, s.box)
        return ds, cfg.labeled_anomalies or 30
    if not cfg.data_path:
        raise ConfigError(f"dataset {cfg.dataset!r} needs --data-path")
    schema = Schema.from_json(cfg.schema) if cfg.schema else Schema.named(cfg.dataset)
    ds = load_csv(cfg.data_path, schema)
    return ds, cfg.labeled_anomalies or schema.labeled_anomalies


def prepare(cfg: ExperimentConfig, split: WeakSupervisionSplit | None = None) -> Prepared:
    ds, n_labeled = load_dataset(cfg)
    if split is None:
        split = make_split(ds, cfg.seed, n_labeled, cfg.noise_fraction, cfg.train_normal_fraction)
    norm = Normalizer.fit(ds.x[split.train])
    x = norm.transform(ds.x)
    shards = shard(split, cfg.n_devices, cfg.seed, cfg.label_skew)
    return Prepared(ds, x, split, shards, n_labeled)


def build(cfg: ExperimentConfig, prep: Prepared) -> tuple[list[EdgeDevice], Coordinator]:
    d = prep.dataset.d
    m, heads = cfg.resolve_dims(d)
    devices = []
    for sh in prep.shards:
        k = sh.device_id
        learner = FeatureLearner.init(
            d, heads, m, derive_rng(cfg.seed, "init", k), d_ff=cfg.d_ff, batch_as_sequence=cfg.batch_as_sequence
        )
        # device-local copies: a device never indexes the global matrix after this point
        local_x = prep.x[np.concatenate([sh.unlabeled, sh.labeled])]
        n_u = len(sh.unlabeled)
        sampler = BatchSampler(
            local_x, np.arange(n_u), np.arange(n_u, len(local_x)), cfg.batch_size, derive_rng(cfg.seed, "sample", k)
        )
        devices.append(
            EdgeDevice(
                k, learner, sampler, cfg.dp, cfg.seed, cfg.lr, sh.n_train,
                test_x=prep.x[sh.test], test_y=prep.dataset.y[sh.test],
            )
        )
    scorer = MlpScorer.init(m, derive_rng(cfg.seed, "init", CLOUD_ID), hidden=tuple(cfg.hidden))
    return devices, Coordinator(scorer, cfg.lr, cfg.seed, cfg.participation)


def evaluate(devices: list[EdgeDevice], coord: Coordinator, tag: int, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = [], []
    for dev in sorted(devices, key=lambda d: d.device_id):
        scores.append(coord.score_features(dev.encode_for_eval(dev.test_x, tag, chunk)))
        labels.append(dev.test_y)
    return np.concatenate(scores), np.concatenate(labels)


def converged_round(losses: list[float], window: int = 50, tol: float = 1e-5) -> int | None:
    """First round at which the best loss improved by less than ``tol`` over the last ``window`` rounds."""
    best = np.minimum.accumulate(np.asarray(losses, dtype=np.float64))
    for t in range(window, len(best)):
        if best[t - window] - best[t] < tol:
            return t
    return None


@dataclass
class RunResult:
    final: MetricsRecord
    history: list[MetricsRecord]
    losses: list[float]
    converged_at: int | None
    rounds_run: int
    feature_payload_per_round: int
    bytes_up_per_round: float
    bytes_down_per_round: float
    sigma: float | None
    out_dir: Path | None


def _metrics(devices, coord, rnd, loss, dataset, chunk) -> MetricsRecord:
    s, y = evaluate(devices, coord, rnd, chunk)
    return MetricsRecord(rnd, auc_roc(s, y), auc_pr(s, y), loss, dataset)


def run_experiment(cfg: ExperimentConfig, write: bool = True, split: WeakSupervisionSplit | None = None) -> RunResult:
    """Train with the round protocol, evaluate every ``eval_every`` rounds, write artifacts."""
    cfg.validate()
    prep = prepare(cfg, split)
    devices, coord = build(cfg, prep)
    sigma = compute_sigma(cfg.dp) if cfg.dp.enabled else None
    out = Path(cfg.output_dir) if write else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        m, heads = cfg.resolve_dims(prep.dataset.d)
        meta = {"d": prep.dataset.d, "m": m, "n_heads": heads, "sigma": sigma, "sampling_rate": cfg.dp.sampling_rate}
        (out / "manifest.json").write_text(json.dumps(manifest(prep.split, prep.shards, cfg.dataset, **meta)) + "\n")
        metrics_fh = open(out / "metrics.jsonl", "w")
        rounds_fh = open(out / "rounds.jsonl", "w")
    bus = MessageBus()
    history: list[MetricsRecord] = []
    losses: list[float] = []
    best: list[float] = []
    records = []
    converged_at = None

    def emit(rec: MetricsRecord):
        history.append(rec)
        log.info("round %d  auc_roc %.4f  auc_pr %.4f  loss %s", rec.round, rec.auc_roc, rec.auc_pr, rec.global_loss)
        if out is not None:
            metrics_fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
            metrics_fh.flush()

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        emit(_metrics(devices, coord, 0, None, cfg.dataset, cfg.eval_chunk))
        for t in range(cfg.max_rounds):
            rec = run_round(devices, coord, bus, pool=pool)
            records.append(rec)
            losses.append(rec.global_loss)
            if out is not None:
                rounds_fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
            done = t + 1
            best.append(min(best[-1], rec.global_loss) if best else rec.global_loss)
            w = cfg.converge_window
            if converged_at is None and done > w and best[-1 - w] - best[-1] < cfg.converge_tol:
                converged_at = done - 1
            stop = cfg.early_stop and converged_at is not None
            if done % cfg.eval_every == 0 or done == cfg.max_rounds or stop:
                emit(_metrics(devices, coord, done, rec.global_loss, cfg.dataset, cfg.eval_chunk))
            if stop:
                break
    finally:
        if pool is not None:
            pool.shutdown()
        if out is not None:
            metrics_fh.close()
            rounds_fh.close()

    rounds_run = len(records)
    if history[-1].round != rounds_run:
        emit(_metrics(devices, coord, rounds_run, losses[-1] if losses else None, cfg.dataset, cfg.eval_chunk))
    result = RunResult(
        final=history[-1],
        history=history,
        losses=losses,
        converged_at=converged_at,
        rounds_run=rounds_run,
        feature_payload_per_round=records[0].feature_payload if records else 0,
        bytes_up_per_round=float(np.mean([r.bytes_up for r in records])) if records else 0.0,
        bytes_down_per_round=float(np.mean([r.bytes_down for r in records])) if records else 0.0,
        sigma=sigma,
        out_dir=out,
    )
    if out is not None:
        _write_artifacts(out, devices, coord, result)
    return result


def _write_artifacts(out: Path, devices, coord, result: RunResult) -> None:
    for dev in devices:
        checkpoint.save_learner(out / "checkpoints" / f"device_{dev.device_id}.fanm", dev.learner)
    checkpoint.save_scorer(out / "checkpoints" / "scorer.fanm", coord.scorer)
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "auc_roc", "auc_pr", "global_loss"])
        for rec in result.history:
            w.writerow([rec.round, rec.auc_roc, rec.auc_pr, "" if rec.global_loss is None else rec.global_loss])
    summary = {
        "final": result.final.to_json(),
        "rounds_run": result.rounds_run,
        "converged_at": result.converged_at,
        "feature_payload_per_round": result.feature_payload_per_round,
        "bytes_up_per_round": result.bytes_up_per_round,
        "bytes_down_per_round": result.bytes_down_per_round,
        "sigma": result.sigma,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def evaluate_run(run_dir) -> MetricsRecord:
    """Re-evaluate a finished run from its config, manifest and checkpoints."""
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.load(run_dir / "config.json")
    split = WeakSupervisionSplit.from_json(json.loads((run_dir / "manifest.json").read_text()))
    prep = prepare(cfg, split)
    devices, coord = build(cfg, prep)
    for dev in devices:
        dev.learner = checkpoint.load_learner(run_dir / "checkpoints" / f"device_{dev.device_id}.fanm")
    coord.scorer = checkpoint.load_scorer(run_dir / "checkpoints" / "scorer.fanm")
    summary = json.loads((run_dir / "summary.json").read_text())
    rnd = summary["rounds_run"]
    return _metrics(devices, coord, rnd, summary["final"]["global_loss"], cfg.dataset, cfg.eval_chunk)


# ------------------------------------------------------------------ sweeps


def compare_overhead(cfg: ExperimentConfig, ratios=(0.25, 0.5, 0.75, 1.0), train: bool = True) -> list[dict]:
    """Feature-upload volume per m-ratio, normalised to the ``m = d`` volume.

    With ``train=False`` only one round is run per ratio (enough for the byte
    counts); otherwise each ratio trains for ``cfg.max_rounds`` and reports
    its convergence round too.
    """
    if len(ratios) < 2:
        raise ConfigError("compare_overhead needs at least two ratios")
    rows = []
    for r in ratios:
        sub = cfg.replace(feature_ratio=r, feature_dim=None, output_dir=str(Path(cfg.output_dir) / f"ratio_{r}"))
        if not train:
            sub = sub.replace(max_rounds=1, eval_every=1)
        res = run_experiment(sub, write=train)
        rows.append({"ratio": r, "feature_payload": res.feature_payload_per_round, "converged_at": res.converged_at,
                     "auc_roc": res.final.auc_roc, "auc_pr": res.final.auc_pr})
    ref_cfg = cfg.replace(feature_ratio=1.0, feature_dim=None, max_rounds=1, eval_every=1)
    ref = next((row["feature_payload"] for row in rows if row["ratio"] == 1.0), None)
    if ref is None:
        ref = run_experiment(ref_cfg, write=False).feature_payload_per_round
    for row in rows:
        row["normalized_payload"] = row["feature_payload"] / ref
    return rows


def sweep(cfg: ExperimentConfig, grid: dict[str, list], workers: int = 1) -> list[dict]:
    """Run every combination in ``grid`` (keys are config fields or ``dp.enabled``)."""
    import itertools

    keys = list(grid)
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        changes, dp_changes = {}, {}
        for k, v in zip(keys, values):
            if k.startswith("dp."):
                dp_changes[k[3:]] = v
            else:
                changes[k] = v
        tag = "_".join(f"{k}={v}" for k, v in zip(keys, values))
        sub = cfg.replace(**changes, output_dir=str(Path(cfg.output_dir) / tag))
        if dp_changes:
            from dataclasses import replace

            sub = sub.replace(dp=replace(sub.dp, **dp_changes))
        cells.append((dict(zip(keys, values)), sub))

    def run(cell):
        params, sub = cell
        t0 = time.perf_counter()
        res = run_experiment(sub)
        return {**params, "auc_roc": res.final.auc_roc, "auc_pr": res.final.auc_pr, "converged_at": res.converged_at,
                "rounds_run": res.rounds_run, "seconds": time.perf_counter() - t0}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, cells))
    return [run(c) for c in cells]
