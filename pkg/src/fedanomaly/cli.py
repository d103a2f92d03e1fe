"""Command line entry point: ``fedanomaly {run,eval,sweep,grad-check,gen-synth}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence,
5 undefined metric. Failures print a one-line JSON diagnostic to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ExperimentConfig, SyntheticConfig
from .data import ConfigError, DataError, make_synthetic, write_csv
from .dp import DpConfig
from .metrics import UndefinedMetricError
from .protocol import NumericDivergence

OUTPUT_ENV = "FEDANOMALY_OUTPUT_DIR"

EXIT_CODES = (
    (ConfigError, 2),
    (DataError, 3),
    (CheckpointError, 3),
    (FileNotFoundError, 3),
    (NumericDivergence, 4),
    (UndefinedMetricError, 5),
)

# flag -> ExperimentConfig field
_FIELDS = {
    "dataset": "dataset",
    "schema": "schema",
    "devices": "n_devices",
    "participation": "participation",
    "batch_size": "batch_size",
    "lr": "lr",
    "feature_ratio": "feature_ratio",
    "feature_dim": "feature_dim",
    "heads": "n_heads",
    "d_ff": "d_ff",
    "tau": "tau",
    "rounds": "max_rounds",
    "eval_every": "eval_every",
    "seed": "seed",
    "output_dir": "output_dir",
    "labeled_anomalies": "labeled_anomalies",
    "noise_fraction": "noise_fraction",
    "label_skew": "label_skew",
    "workers": "workers",
    "converge_window": "converge_window",
    "converge_tol": "converge_tol",
}
_DP_FIELDS = {"epsilon": "epsilon", "delta": "delta", "clip_norm": "clip_norm", "sampling_rate": "sampling_rate"}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="JSON config to start from (flags override it)")
    g.add_argument("--dataset")
    g.add_argument("--data-path", action="append", help="input file; repeat for several")
    g.add_argument("--schema", help="schema JSON, default: the bundled one for --dataset")
    g.add_argument("--devices", type=int, help="number of edge devices K")
    g.add_argument("--participation", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--feature-ratio", type=float, help="m / d")
    g.add_argument("--feature-dim", type=int, help="m, overrides --feature-ratio")
    g.add_argument("--heads", type=int)
    g.add_argument("--d-ff", type=int)
    g.add_argument("--hidden", type=int, nargs=2, metavar=("H1", "H2"))
    g.add_argument("--tau", type=float)
    g.add_argument("--rounds", type=int)
    g.add_argument("--eval-every", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--output-dir")
    g.add_argument("--labeled-anomalies", type=int)
    g.add_argument("--noise-fraction", type=float)
    g.add_argument("--label-skew", type=float, help="Dirichlet alpha for non-IID shards")
    g.add_argument("--workers", type=int)
    g.add_argument("--converge-window", type=int)
    g.add_argument("--converge-tol", type=float)
    g.add_argument("--early-stop", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--batch-as-sequence", action=argparse.BooleanOptionalAction, default=None)
    d = p.add_argument_group("privacy")
    d.add_argument("--dp", action=argparse.BooleanOptionalAction, default=None)
    d.add_argument("--epsilon", type=float)
    d.add_argument("--delta", type=float)
    d.add_argument("--clip-norm", type=float)
    d.add_argument("--sampling-rate", type=float)
    s = p.add_argument_group("synthetic data")
    s.add_argument("--synth-d", type=int)
    s.add_argument("--synth-normal", type=int)
    s.add_argument("--synth-anomaly", type=int)
    s.add_argument("--synth-separation", type=float)


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {field: getattr(args, flag) for flag, field in _FIELDS.items() if getattr(args, flag) is not None}
    if args.output_dir is None and os.environ.get(OUTPUT_ENV):
        changes["output_dir"] = os.environ[OUTPUT_ENV]
    if args.data_path:
        changes["data_path"] = list(args.data_path)
    if args.hidden:
        changes["hidden"] = tuple(args.hidden)
    if args.early_stop is not None:
        changes["early_stop"] = args.early_stop
    if args.batch_as_sequence is not None:
        changes["batch_as_sequence"] = args.batch_as_sequence
    dp = {f: getattr(args, k) for k, f in _DP_FIELDS.items() if getattr(args, k) is not None}
    if args.dp is not None:
        dp["enabled"] = args.dp
    synth = {
        f: getattr(args, k)
        for k, f in (("synth_d", "d"), ("synth_normal", "n_normal"), ("synth_anomaly", "n_anomaly"),
                     ("synth_separation", "separation"))
        if getattr(args, k) is not None
    }
    try:
        if dp:
            changes["dp"] = dataclasses.replace(cfg.dp, **dp)
        if synth:
            changes["synthetic"] = dataclasses.replace(cfg.synthetic, **synth)
        cfg = cfg.replace(**changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def _parse_grid(items: list[str]) -> dict[str, list]:
    grid = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigError(f"grid entry {item!r} is not key=v1,v2,...")
        parsed = []
        for v in values.split(","):
            try:
                parsed.append(json.loads(v))
            except json.JSONDecodeError:
                parsed.append(v)
        grid[key] = parsed
    return grid


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ------------------------------------------------------------------ verbs


def cmd_run(args) -> int:
    from .experiment import run_experiment

    cfg = config_from_args(args)
    res = run_experiment(cfg)
    _print({**res.final.to_json(), "rounds_run": res.rounds_run, "converged_at": res.converged_at,
            "output_dir": str(res.out_dir)})
    return 0


def cmd_eval(args) -> int:
    from .experiment import evaluate_run

    _print(evaluate_run(args.run_dir).to_json())
    return 0


def cmd_sweep(args) -> int:
    from .experiment import compare_overhead, sweep

    cfg = config_from_args(args)
    if args.overhead:
        rows = compare_overhead(cfg, tuple(args.overhead), train=not args.bytes_only)
    else:
        if not args.grid:
            raise ConfigError("sweep needs --grid key=v1,v2 or --overhead")
        rows = sweep(cfg, _parse_grid(args.grid), workers=args.parallel)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _print(rows)
    return 0


def cmd_grad_check(args) -> int:
    from .centralized import check_gradients

    ok = True
    for seed in range(args.seeds):
        for rep in check_gradients(seed, args.d, args.heads, args.m, args.b, args.tol, args.batch_as_sequence):
            ok &= rep.passed
            if args.verbose or not rep.passed:
                print(f"seed {seed} {rep.name:8s} max_rel_error {rep.max_rel_error:.3e} {'ok' if rep.passed else 'FAIL'}")
    print("grad-check passed" if ok else "grad-check FAILED")
    return 0 if ok else 4


def cmd_gen_synth(args) -> int:
    s = SyntheticConfig()
    ds = make_synthetic(
        args.d or s.d, args.n_normal or s.n_normal, args.n_anomaly or s.n_anomaly, args.seed,
        s.separation if args.separation is None else args.separation,
        s.outlier_fraction if args.outlier_fraction is None else args.outlier_fraction,
    )
    write_csv(ds, args.out)
    _print({"path": args.out, "d": ds.d, "normal": ds.n_normal, "anomaly": ds.n_anomaly})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedanomaly", description="Federated split-learning anomaly detection.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one configuration")
    _add_config_flags(run)
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="re-evaluate a finished run directory from its checkpoints")
    ev.add_argument("run_dir")
    ev.set_defaults(func=cmd_eval)

    sw = sub.add_parser("sweep", help="grid over config fields, or an m-ratio overhead comparison")
    _add_config_flags(sw)
    sw.add_argument("--grid", action="append", help="field=v1,v2 (use dp.enabled=true,false for DP)")
    sw.add_argument("--overhead", type=float, nargs="+", metavar="RATIO")
    sw.add_argument("--bytes-only", action="store_true", help="with --overhead, one round per ratio")
    sw.add_argument("--parallel", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    gc = sub.add_parser("grad-check", help="finite-difference check of every parameter")
    gc.add_argument("--seeds", type=int, default=5)
    gc.add_argument("--d", type=int, default=12)
    gc.add_argument("--heads", type=int, default=3)
    gc.add_argument("--m", type=int, default=6)
    gc.add_argument("--b", type=int, default=4)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--batch-as-sequence", action="store_true")
    gc.set_defaults(func=cmd_grad_check)

    gs = sub.add_parser("gen-synth", help="write a two-cluster synthetic CSV (label in the last column)")
    gs.add_argument("out")
    gs.add_argument("--d", type=int)
    gs.add_argument("--n-normal", type=int)
    gs.add_argument("--n-anomaly", type=int)
    gs.add_argument("--seed", type=int, default=0)
    gs.add_argument("--separation", type=float)
    gs.add_argument("--outlier-fraction", type=float)
    gs.set_defaults(func=cmd_gen_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except tuple(e for e, _ in EXIT_CODES) as exc:
        code = next(c for e, c in EXIT_CODES if isinstance(exc, e))
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
