"""Declarative experiment configs.

An experiment is one JSON document with a fixed schema::

    {
      "dataset":    {"kind": "synthetic", "num_classes": 10, "dim": 16,
                     "samples_per_class": 100, "class_separation": 2.0}
                    | {"kind": "file", "path": "data.fcvd"},
      "partition":  {"kind": "lda", "alpha": 0.5, "min_shard_size": 1}
                    | {"kind": "frequency"}
                    | {"kind": "file", "path": "partition.json"},
      "model":      {"kind": "logistic_regression" | "mlp",
                     "hidden_dim": 32, "init_scale": 0.01},
      "client":     {"local_epochs": 1, "batch_size": 32, "base_lr": 0.1,
                     "optimizer": "sgd" | "momentum_sgd",
                     "momentum_beta": 0.9,
                     "scheduler": "none" | "linear_decay",
                     "prox_mu": 0.0},
      "federation": {"num_clients": 10, "clients_per_round": 10,
                     "num_rounds": 100},
      "aggregator": {"kind": "fedavg" | "fedopt" | "fednova", ...},
      "mode":       "simulate" | {"kind": "sockets", "workers": 4},
      "eval_interval": 1,
      "output_dir": "fedsim_out",
      "master_seed": 0
    }

One master_seed determines the whole run. Every randomized concern draws
from its own stream via seeding.derive_seed(master_seed, tag):

    "dataset"    synthetic data generation
    "split"      the 80/20 train/test holdout permutation
    "partition"  the LDA partitioner
    "model-init" model weight initialization
    "shuffle"    client-side batch shuffling
    "sampling"   cohort sampling

so worker processes can rebuild identical shards from the config alone.
The model's input_dim and num_classes are inferred from the dataset; stating
them in the config is allowed but they must then match it.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import datagen
from .client import ClientConfig, ClientShard, LINEAR_DECAY
from .models import ModelSpec, LOGISTIC_REGRESSION, MLP
from .seeding import derive_seed
from .server import AggregatorConfig, FederationConfig, FEDOPT

SIMULATE = "simulate"
SOCKETS = "sockets"


class ConfigError(ValueError):
    """The config document is malformed or internally inconsistent."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str  # "synthetic" or "file"
    num_classes: int = 0
    dim: int = 0
    samples_per_class: int = 0
    class_separation: float = 0.0
    path: str = ""


@dataclass(frozen=True)
class PartitionConfig:
    kind: str  # "lda", "frequency", or "file"
    alpha: float = 0.0
    min_shard_size: int = 1
    path: str = ""


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    hidden_dim: int = 0
    init_scale: float = 0.01
    input_dim: int = 0  # 0 = infer from the dataset
    num_classes: int = 0  # 0 = infer from the dataset


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    partition: PartitionConfig
    model: ModelConfig
    client: ClientConfig
    federation: FederationConfig
    aggregator: AggregatorConfig
    mode: str
    workers: int
    eval_interval: int
    output_dir: str
    master_seed: int

    def to_dict(self) -> dict:
        """Canonical JSON form; parse_config(to_dict()) reproduces self."""
        if self.dataset.kind == "synthetic":
            dataset = {"kind": "synthetic", "num_classes": self.dataset.num_classes,
                       "dim": self.dataset.dim,
                       "samples_per_class": self.dataset.samples_per_class,
                       "class_separation": self.dataset.class_separation}
        else:
            dataset = {"kind": "file", "path": self.dataset.path}
        if self.partition.kind == "lda":
            partition = {"kind": "lda", "alpha": self.partition.alpha,
                         "min_shard_size": self.partition.min_shard_size}
        elif self.partition.kind == "frequency":
            partition = {"kind": "frequency"}
        else:
            partition = {"kind": "file", "path": self.partition.path}
        model = {"kind": self.model.kind, "init_scale": self.model.init_scale}
        if self.model.kind == MLP:
            model["hidden_dim"] = self.model.hidden_dim
        if self.model.input_dim:
            model["input_dim"] = self.model.input_dim
        if self.model.num_classes:
            model["num_classes"] = self.model.num_classes
        client = {"local_epochs": self.client.local_epochs,
                  "batch_size": self.client.batch_size,
                  "base_lr": self.client.base_lr,
                  "optimizer": self.client.optimizer,
                  "momentum_beta": self.client.momentum_beta,
                  "scheduler": self.client.scheduler,
                  "prox_mu": self.client.prox_mu}
        federation = {"num_clients": self.federation.num_clients,
                      "clients_per_round": self.federation.clients_per_round,
                      "num_rounds": self.federation.num_rounds}
        aggregator = {"kind": self.aggregator.kind}
        if self.aggregator.kind == FEDOPT:
            aggregator.update({"server_opt": self.aggregator.server_opt,
                               "server_lr": self.aggregator.server_lr,
                               "beta1": self.aggregator.beta1,
                               "beta2": self.aggregator.beta2,
                               "tau": self.aggregator.tau})
        mode = SIMULATE if self.mode == SIMULATE else {"kind": SOCKETS,
                                                       "workers": self.workers}
        return {"dataset": dataset, "partition": partition, "model": model,
                "client": client, "federation": federation,
                "aggregator": aggregator, "mode": mode,
                "eval_interval": self.eval_interval,
                "output_dir": self.output_dir, "master_seed": self.master_seed}


def _require_keys(obj: dict, allowed: set, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _as_int(obj: dict, key: str, where: str, default=None, minimum=None) -> int:
    v = obj.get(key, default)
    if v is None or isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key}: expected an integer")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}.{key}: must be >= {minimum}")
    return v


def _as_float(obj: dict, key: str, where: str, default=None, minimum=None,
              exclusive=False) -> float:
    v = obj.get(key, default)
    if v is None or isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number")
    v = float(v)
    if minimum is not None and (v <= minimum if exclusive else v < minimum):
        op = ">" if exclusive else ">="
        raise ConfigError(f"{where}.{key}: must be {op} {minimum}")
    return v


def _as_str(obj: dict, key: str, where: str, default=None, choices=None) -> str:
    v = obj.get(key, default)
    if not isinstance(v, str):
        raise ConfigError(f"{where}.{key}: expected a string")
    if choices is not None and v not in choices:
        raise ConfigError(f"{where}.{key}: expected one of {sorted(choices)}, got {v!r}")
    return v


def _parse_dataset(obj) -> DatasetConfig:
    kind = _as_str(obj if isinstance(obj, dict) else {}, "kind", "dataset",
                   choices={"synthetic", "file"})
    if kind == "synthetic":
        _require_keys(obj, {"kind", "num_classes", "dim", "samples_per_class",
                            "class_separation"},
                      {"kind", "num_classes", "dim", "samples_per_class"}, "dataset")
        return DatasetConfig(
            kind="synthetic",
            num_classes=_as_int(obj, "num_classes", "dataset", minimum=1),
            dim=_as_int(obj, "dim", "dataset", minimum=1),
            samples_per_class=_as_int(obj, "samples_per_class", "dataset", minimum=1),
            class_separation=_as_float(obj, "class_separation", "dataset",
                                       default=1.0, minimum=0.0))
    _require_keys(obj, {"kind", "path"}, {"kind", "path"}, "dataset")
    return DatasetConfig(kind="file", path=_as_str(obj, "path", "dataset"))


def _parse_partition(obj, federation: FederationConfig) -> PartitionConfig:
    kind = _as_str(obj if isinstance(obj, dict) else {}, "kind", "partition",
                   choices={"lda", "frequency", "file"})
    declared = None
    if isinstance(obj, dict) and "num_clients" in obj:
        declared = _as_int(obj, "num_clients", "partition", minimum=1)
        if declared != federation.num_clients:
            raise ConfigError(
                f"partition.num_clients={declared} disagrees with "
                f"federation.num_clients={federation.num_clients}"
            )
    if kind == "lda":
        _require_keys(obj, {"kind", "alpha", "min_shard_size", "num_clients"},
                      {"kind", "alpha"}, "partition")
        return PartitionConfig(
            kind="lda",
            alpha=_as_float(obj, "alpha", "partition", minimum=0.0, exclusive=True),
            min_shard_size=_as_int(obj, "min_shard_size", "partition",
                                   default=1, minimum=1))
    if kind == "frequency":
        _require_keys(obj, {"kind", "num_clients"}, {"kind"}, "partition")
        return PartitionConfig(kind="frequency")
    _require_keys(obj, {"kind", "path", "num_clients"}, {"kind", "path"}, "partition")
    return PartitionConfig(kind="file", path=_as_str(obj, "path", "partition"))


def _parse_model(obj) -> ModelConfig:
    kind = _as_str(obj if isinstance(obj, dict) else {}, "kind", "model",
                   choices={LOGISTIC_REGRESSION, MLP})
    _require_keys(obj, {"kind", "hidden_dim", "init_scale", "input_dim",
                        "num_classes"}, {"kind"}, "model")
    hidden = _as_int(obj, "hidden_dim", "model", default=0, minimum=0)
    if kind == MLP and hidden < 1:
        raise ConfigError("model.hidden_dim: required (>= 1) for mlp")
    if kind == LOGISTIC_REGRESSION and hidden:
        raise ConfigError("model.hidden_dim: only valid for mlp")
    return ModelConfig(
        kind=kind, hidden_dim=hidden,
        init_scale=_as_float(obj, "init_scale", "model", default=0.01, minimum=0.0),
        input_dim=_as_int(obj, "input_dim", "model", default=0, minimum=0),
        num_classes=_as_int(obj, "num_classes", "model", default=0, minimum=0))


def _parse_client(obj, federation: FederationConfig, master_seed: int) -> ClientConfig:
    _require_keys(obj, {"local_epochs", "batch_size", "base_lr", "optimizer",
                        "momentum_beta", "scheduler", "prox_mu"},
                  {"local_epochs", "batch_size", "base_lr"}, "client")
    scheduler = _as_str(obj, "scheduler", "client", default="none",
                        choices={"none", "linear_decay"})
    try:
        return ClientConfig(
            local_epochs=_as_int(obj, "local_epochs", "client", minimum=1),
            batch_size=_as_int(obj, "batch_size", "client", minimum=1),
            base_lr=_as_float(obj, "base_lr", "client", minimum=0.0, exclusive=True),
            optimizer=_as_str(obj, "optimizer", "client", default="sgd",
                              choices={"sgd", "momentum_sgd"}),
            momentum_beta=_as_float(obj, "momentum_beta", "client", default=0.9),
            scheduler=scheduler,
            total_rounds=federation.num_rounds if scheduler == LINEAR_DECAY else 0,
            prox_mu=_as_float(obj, "prox_mu", "client", default=0.0, minimum=0.0),
            shuffle_seed=derive_seed(master_seed, "shuffle"))
    except ValueError as e:
        raise ConfigError(f"client: {e}") from e


def _parse_federation(obj, master_seed: int) -> FederationConfig:
    _require_keys(obj, {"num_clients", "clients_per_round", "num_rounds"},
                  {"num_clients", "clients_per_round", "num_rounds"}, "federation")
    try:
        return FederationConfig(
            num_clients=_as_int(obj, "num_clients", "federation", minimum=1),
            clients_per_round=_as_int(obj, "clients_per_round", "federation",
                                      minimum=1),
            num_rounds=_as_int(obj, "num_rounds", "federation", minimum=1),
            sampling_seed=derive_seed(master_seed, "sampling"))
    except ValueError as e:
        raise ConfigError(f"federation: {e}") from e


def _parse_aggregator(obj) -> AggregatorConfig:
    kind = _as_str(obj if isinstance(obj, dict) else {}, "kind", "aggregator",
                   choices={"fedavg", "fedopt", "fednova"})
    if kind != FEDOPT:
        _require_keys(obj, {"kind"}, {"kind"}, "aggregator")
        return AggregatorConfig(kind=kind)
    _require_keys(obj, {"kind", "server_opt", "server_lr", "beta1", "beta2", "tau"},
                  {"kind"}, "aggregator")
    try:
        return AggregatorConfig(
            kind=kind,
            server_opt=_as_str(obj, "server_opt", "aggregator", default="sgd",
                               choices={"sgd", "adam"}),
            server_lr=_as_float(obj, "server_lr", "aggregator", default=1.0,
                                minimum=0.0, exclusive=True),
            beta1=_as_float(obj, "beta1", "aggregator", default=0.9),
            beta2=_as_float(obj, "beta2", "aggregator", default=0.99),
            tau=_as_float(obj, "tau", "aggregator", default=1e-3,
                          minimum=0.0, exclusive=True))
    except ValueError as e:
        raise ConfigError(f"aggregator: {e}") from e


def _parse_mode(obj) -> tuple:
    if obj == SIMULATE or obj == {"kind": SIMULATE}:
        return SIMULATE, 0
    if isinstance(obj, dict):
        kind = _as_str(obj, "kind", "mode", choices={SIMULATE, SOCKETS})
        _require_keys(obj, {"kind", "workers"}, {"kind"}, "mode")
        return SOCKETS, _as_int(obj, "workers", "mode", default=4, minimum=1)
    if obj == SOCKETS:
        return SOCKETS, 4
    raise ConfigError(f"mode: expected 'simulate' or a sockets object, got {obj!r}")


_TOP_KEYS = {"dataset", "partition", "model", "client", "federation",
             "aggregator", "mode", "eval_interval", "output_dir", "master_seed"}


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config dict and derive all sub-seeds from master_seed."""
    _require_keys(doc, _TOP_KEYS,
                  {"dataset", "partition", "model", "client", "federation"},
                  "config")
    master_seed = _as_int(doc, "master_seed", "config", default=0, minimum=0)
    federation = _parse_federation(doc["federation"], master_seed)
    cfg = ExperimentConfig(
        dataset=_parse_dataset(doc["dataset"]),
        partition=_parse_partition(doc["partition"], federation),
        model=_parse_model(doc["model"]),
        client=_parse_client(doc["client"], federation, master_seed),
        federation=federation,
        aggregator=_parse_aggregator(doc.get("aggregator", {"kind": "fedavg"})),
        mode=_parse_mode(doc.get("mode", SIMULATE))[0],
        workers=_parse_mode(doc.get("mode", SIMULATE))[1],
        eval_interval=_as_int(doc, "eval_interval", "config", default=1, minimum=1),
        output_dir=_as_str(doc, "output_dir", "config", default="fedsim_out"),
        master_seed=master_seed)
    if cfg.dataset.kind == "synthetic":
        if cfg.model.num_classes and cfg.model.num_classes != cfg.dataset.num_classes:
            raise ConfigError(
                f"model.num_classes={cfg.model.num_classes} disagrees with "
                f"dataset.num_classes={cfg.dataset.num_classes}"
            )
        if cfg.model.input_dim and cfg.model.input_dim != cfg.dataset.dim:
            raise ConfigError(
                f"model.input_dim={cfg.model.input_dim} disagrees with "
                f"dataset.dim={cfg.dataset.dim}"
            )
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read a JSON config file; relative data paths resolve against it."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    base = os.path.dirname(os.path.abspath(path))
    for section in ("dataset", "partition"):
        block = doc.get(section)
        if isinstance(block, dict) and isinstance(block.get("path"), str):
            block["path"] = os.path.normpath(os.path.join(base, block["path"]))
    return parse_config(doc)


@dataclass
class Problem:
    """A fully materialized experiment: data, split, shards, and model."""

    train: datagen.LabeledDataset
    test: datagen.LabeledDataset
    partition: datagen.Partition
    model: ModelSpec
    shards: list


def _split_train_test(ds: datagen.LabeledDataset, master_seed: int) -> tuple:
    n = ds.num_samples
    n_test = n // 5
    if n_test < 1:
        raise ConfigError(f"dataset has {n} samples, too few to hold out a test split")
    perm = np.random.default_rng(derive_seed(master_seed, "split")).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return ds.subset(train_idx), ds.subset(test_idx)


def build_problem(cfg: ExperimentConfig) -> Problem:
    """Materialize datasets, partition, shards, and the model spec.

    Deterministic given the config: server and every worker process call this
    independently and arrive at identical shards.
    """
    ms = cfg.master_seed
    if cfg.dataset.kind == "synthetic":
        ds = datagen.generate_synthetic(cfg.dataset.num_classes, cfg.dataset.dim,
                                        cfg.dataset.samples_per_class,
                                        cfg.dataset.class_separation,
                                        derive_seed(ms, "dataset"))
    else:
        ds = datagen.read_dataset(cfg.dataset.path)
    train, test = _split_train_test(ds, ms)

    k = cfg.federation.num_clients
    if cfg.partition.kind == "lda":
        lda = datagen.LdaConfig(cfg.partition.alpha, k, cfg.partition.min_shard_size,
                                derive_seed(ms, "partition"))
        part = datagen.lda_partition(train, lda)
    elif cfg.partition.kind == "frequency":
        # single-label data: treat each sample's label as its one category
        items = datagen.MultiLabelDataset([{int(y)} for y in train.labels],
                                          train.num_classes)
        part = datagen.frequency_partition(items, k)
    else:
        part = datagen.read_partition(cfg.partition.path)
        if part.num_clients != k:
            raise ConfigError(
                f"partition file has {part.num_clients} clients, "
                f"federation.num_clients is {k}"
            )
    datagen.validate_partition(part, train.num_samples)

    input_dim = cfg.model.input_dim or train.dim
    num_classes = cfg.model.num_classes or train.num_classes
    if input_dim != train.dim:
        raise ConfigError(f"model.input_dim={input_dim} but the data has d={train.dim}")
    if num_classes != train.num_classes:
        raise ConfigError(
            f"model.num_classes={num_classes} but the data has {train.num_classes}"
        )
    spec = ModelSpec(kind=cfg.model.kind, input_dim=input_dim,
                     num_classes=num_classes,
                     hidden_dim=cfg.model.hidden_dim or None,
                     init_seed=derive_seed(ms, "model-init"),
                     init_scale=cfg.model.init_scale)

    shards = [ClientShard(train.features[part.assignments[i]],
                          train.labels[part.assignments[i]])
              for i in range(k)]
    return Problem(train=train, test=test, partition=part, model=spec, shards=shards)
