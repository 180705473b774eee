"""Command line interface: a thin client over the HTTP service.

Subcommands: analyze, train, eval, sweep, serve. By default commands run
against an in-process instance of the service; pass --server to talk to
a remote one. Exit codes: 0 success, 2 invalid arguments or config,
3 diverged training.

Config files are YAML (or JSON) with the schema of
``rfcnn.schemas.ExperimentConfig``; every flag has a config-file
equivalent and ``--seed`` overrides the config's training seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import yaml
from pydantic import ValidationError

from .client import ServiceClient, ServiceError
from .schemas import ExperimentConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def _load_config(path: str, seed: int | None) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    raw = p.read_text()
    data = json.loads(raw) if p.suffix == ".json" else yaml.safe_load(raw)
    cfg = ExperimentConfig.model_validate(data)
    if seed is not None:
        cfg.train.seed = seed
    return cfg


def _analyze_payload(args) -> dict:
    payload = {"arch": args.arch, "n_classes": args.n_classes, "width": args.width}
    if args.rho is not None:
        payload["rho"] = args.rho
    if args.removed is not None:
        payload["removed"] = args.removed
    return payload


def _print_analysis(result: dict, csv_path: str | None) -> None:
    rows = result["layers"]
    print(f"{'layer':>5}  {'kind':<5} {'k':>2} {'s':>2} {'S':>4} {'RF':>5}")
    for row in rows:
        print(
            f"{row['layer_index']:>5}  {row['kind']:<5} {row['k']:>2} "
            f"{row['stride']:>2} {row['cumulative_stride']:>4} {row['rf']:>5}"
        )
    rf = result["max_rf"]
    print(f"max RF: {rf} x {rf}  ({result['network_name']})")
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer_index", "kind", "k", "stride", "cumulative_stride", "rf"])
            for row in rows:
                writer.writerow([
                    row["layer_index"], row["kind"], row["k"],
                    row["stride"], row["cumulative_stride"], row["rf"],
                ])
        print(f"wrote {csv_path}")


def cmd_analyze(args) -> int:
    with ServiceClient(args.server) as client:
        result = client.analyze(_analyze_payload(args))
    if args.spec:
        print(result["arch_text"], end="")
    _print_analysis(result, args.csv)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed)
    with ServiceClient(args.server) as client:
        result = client.train(cfg.model_dump())
    print(f"run {result['run_id']} ({result['arch']}, RF {result['rf']}) -> {result['run_dir']}")
    for name, stats in result["final"].items():
        print(f"  {name}: {stats['mean']:.6f} +/- {stats['std']:.6f} (last-window)")
    print(f"metrics: {result['metrics_csv']}")
    print(f"checkpoint: {result['checkpoint']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.config:
        dataset = _load_config(args.config, None).dataset.model_dump()
    elif args.container and args.manifest:
        dataset = {"kind": "container", "path": args.container, "manifest": args.manifest}
    else:
        print("eval needs --config or both --container and --manifest", file=sys.stderr)
        return EXIT_USAGE
    payload = {"checkpoint": args.checkpoint, "dataset": dataset, "threshold": args.threshold}
    with ServiceClient(args.server) as client:
        result = client.eval(payload)
    for name in ("test_loss", "macro_pr_auc", "f1_classical", "f1_posneg"):
        print(f"{name}: {result[name]:.6f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config, args.seed)
    values = [int(v) for v in args.values.split(",") if v.strip() != ""]
    base = cfg.model_dump()
    if cfg.arch == "vgg":
        base["removed"], base["rho"] = values[0], None
    else:
        base["rho"], base["removed"] = values[0], None
    payload = {"base": base, "values": values, "parallel": args.parallel}
    with ServiceClient(args.server) as client:
        result = client.sweep(payload)
    failed = 0
    for run in result["runs"]:
        if run["status"] == "completed":
            last = run["final_epoch"]
            print(
                f"value={run['value']} rf={run['rf']} run={run['run_id']} "
                f"train_loss={last['train_loss']:.4f} test_loss={last['test_loss']:.4f} "
                f"pr_auc={last['macro_pr_auc']:.4f}"
            )
        else:
            failed += 1
            print(f"value={run['value']} rf={run['rf']} FAILED: {run['error']}")
    print(f"combined CSV: {result['csv_path']}")
    return EXIT_DIVERGED if failed else EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfcnn")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="print the per-layer RF trace of an architecture")
    p.add_argument("--arch", choices=("cp_resnet", "vgg", "ss_resnet"), required=True)
    p.add_argument("--rho", type=int, default=None)
    p.add_argument("--removed", type=int, default=None)
    p.add_argument("--n-classes", type=int, default=10)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--csv", default=None, help="also write the trace rows to this CSV file")
    p.add_argument("--server", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="run one training from a config file")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="override the config's training seed")
    p.add_argument("--server", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None, help="config file whose dataset section to use")
    p.add_argument("--container", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--server", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train one model per RF setting")
    p.add_argument("config")
    p.add_argument("--values", required=True, help="comma-separated rho (or removal) values")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--server", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.status_code == 409:
            return EXIT_DIVERGED
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())
