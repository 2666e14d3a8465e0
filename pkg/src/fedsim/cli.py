"""Command-line entry point.

Three subcommands, all driven by a JSON config (see config module):

    fedsim partition --config exp.json [--out DIR]
        Generate the dataset and partition; write partition.json,
        distribution.csv, and distribution.png.
    fedsim run --config exp.json [--out DIR] [--mode simulate|sockets]
               [--port N]
        Run federated training; write metrics.csv, final_params.fcvd, and
        metrics.png.
    fedsim inspect PATH
        Summarize a dataset (.fcvd), partition (.json), or metrics (.csv)
        file.

Exit codes: 0 success; 2 config or input validation; 3 aborted round or
other runtime failure; 4 unreadable, corrupt, or unwritable files.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import datagen, server, transport
from .config import ConfigError, load_config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim",
                                     description="Federated training simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="generate and export a data partition")
    p.add_argument("--config", required=True, help="experiment JSON file")
    p.add_argument("--out", help="output directory (default: config output_dir)")

    r = sub.add_parser("run", help="run federated training")
    r.add_argument("--config", required=True, help="experiment JSON file")
    r.add_argument("--out", help="output directory (default: config output_dir)")
    r.add_argument("--mode", choices=["simulate", "sockets"],
                   help="override the config's execution mode")
    r.add_argument("--port", type=int,
                   help="TCP port for sockets mode (overrides FEDSIM_PORT)")

    i = sub.add_parser("inspect", help="summarize a produced file")
    i.add_argument("path", help="dataset, partition, or metrics file")
    return parser


def write_final_params(params: np.ndarray, path) -> None:
    """Store a parameter vector in the dataset container (one value per row)."""
    ds = datagen.LabeledDataset(np.asarray(params, dtype=np.float64).reshape(-1, 1),
                                np.zeros(len(params), dtype=np.int64), 1)
    datagen.write_dataset(ds, path)


def read_final_params(path) -> np.ndarray:
    return datagen.read_dataset(path).features[:, 0].copy()


def _cmd_partition(args) -> int:
    cfg = load_config(args.config)
    from .config import build_problem  # heavy import path kept off --help

    problem = build_problem(cfg)
    out_dir = args.out or cfg.output_dir
    matrix = datagen.distribution_matrix(problem.train, problem.partition)
    os.makedirs(out_dir, exist_ok=True)
    datagen.write_partition(problem.partition, os.path.join(out_dir, "partition.json"))
    datagen.write_distribution_csv(matrix, os.path.join(out_dir, "distribution.csv"))
    from . import plotting

    plotting.save_distribution_heatmap(matrix, os.path.join(out_dir, "distribution.png"))
    sizes = problem.partition.shard_sizes()
    print(f"partitioned {problem.train.num_samples} samples across "
          f"{problem.partition.num_clients} clients "
          f"(shard sizes {min(sizes)}..{max(sizes)})")
    print(f"wrote partition.json, distribution.csv, distribution.png to {out_dir}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.mode:
        workers = cfg.workers if cfg.workers >= 1 else 4
        cfg = dataclasses.replace(cfg, mode=args.mode,
                                  workers=workers if args.mode == "sockets" else 0)
    out_dir = args.out or cfg.output_dir

    result = server.run_training(cfg, port=args.port)

    os.makedirs(out_dir, exist_ok=True)
    server.write_metrics_csv(result.metrics, os.path.join(out_dir, "metrics.csv"))
    write_final_params(result.final_params, os.path.join(out_dir, "final_params.fcvd"))
    from . import plotting

    plotting.save_training_curves(result.metrics, os.path.join(out_dir, "metrics.png"))
    best = max(result.metrics, key=lambda m: m.test_acc)
    last = result.metrics[-1]
    print(f"finished {cfg.federation.num_rounds} rounds in {cfg.mode} mode")
    print(f"final test_acc={last.test_acc:.4f} test_loss={last.test_loss:.4f}; "
          f"best test_acc={best.test_acc:.4f} at round {best.round}")
    print(f"wrote metrics.csv, final_params.fcvd, metrics.png to {out_dir}")
    return 0


def _inspect_dataset(path) -> None:
    ds = datagen.read_dataset(path)
    print(f"dataset {path}")
    print(f"  samples = {ds.num_samples}, dim = {ds.dim}, classes = {ds.num_classes}")
    counts = np.bincount(ds.labels, minlength=ds.num_classes)
    shown = ", ".join(f"{c}: {int(v)}" for c, v in enumerate(counts[:16]))
    more = " ..." if ds.num_classes > 16 else ""
    print(f"  per-class counts: {shown}{more}")


def _inspect_partition(path) -> None:
    p = datagen.read_partition(path)
    sizes = p.shard_sizes()
    print(f"partition {path}")
    print(f"  clients = {p.num_clients}, samples = {sum(sizes)}")
    print(f"  shard sizes: min = {min(sizes)}, max = {max(sizes)}, "
          f"mean = {sum(sizes) / len(sizes):.1f}")
    if p.num_clients <= 20:
        for k in range(p.num_clients):
            print(f"  client {k}: {sizes[k]} samples")


def _inspect_metrics(path) -> None:
    rows = server.read_metrics_csv(path)
    best = max(rows, key=lambda m: m.test_acc)
    last = rows[-1]
    print(f"metrics {path}")
    print(f"  eval points = {len(rows)}, rounds {rows[0].round}..{last.round}")
    print(f"  best test_acc = {best.test_acc:.4f} at round {best.round}")
    print(f"  final test_acc = {last.test_acc:.4f}, test_loss = {last.test_loss:.4f}, "
          f"train_loss = {last.train_loss:.4f}")


def _cmd_inspect(args) -> int:
    path = args.path
    with open(path, "rb") as f:
        head = f.read(4)
    ext = os.path.splitext(path)[1].lower()
    if head == b"FCVD" or ext == ".fcvd":
        _inspect_dataset(path)
    elif ext == ".json":
        _inspect_partition(path)
    elif ext == ".csv":
        _inspect_metrics(path)
    else:
        raise ConfigError(f"{path}: cannot tell what kind of file this is")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "partition":
            return _cmd_partition(args)
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_inspect(args)
    except datagen.DatasetFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (ConfigError, datagen.PartitionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (server.RoundAbortError, transport.ProtocolError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
