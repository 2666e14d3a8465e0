"""Server-side round loop and the aggregation strategies.

Each communication round broadcasts the global parameters to a sampled
cohort, waits for every cohort member's result (a failed client aborts the
round, never a partial aggregate), and combines the returned parameter
vectors:

* fedavg: sample-count-weighted average of client parameters.
* fedopt: the averaged update is treated as a pseudo-gradient and fed to a
  server-side optimizer (plain SGD or Adam without bias correction).
* fednova: client displacements are normalized by their local step counts
  before averaging, compensating heterogeneous amounts of local work.

The proximal variant needs no server logic: it aggregates like fedavg and
differs only in the client objective.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import models
from .params import as_vector, axpy, elementwise_div_add, elementwise_square, weighted_sum
from .seeding import derive_seed

FEDAVG = "fedavg"
FEDOPT = "fedopt"
FEDNOVA = "fednova"

SERVER_SGD = "sgd"
SERVER_ADAM = "adam"


class RoundAbortError(RuntimeError):
    """A round could not complete; no partial aggregation is performed."""


@dataclass(frozen=True)
class FederationConfig:
    num_clients: int
    clients_per_round: int
    num_rounds: int
    sampling_seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if not 1 <= self.clients_per_round <= self.num_clients:
            raise ValueError("clients_per_round must be in [1, num_clients]")
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be >= 1")


@dataclass(frozen=True)
class AggregatorConfig:
    kind: str = FEDAVG
    server_opt: str = SERVER_SGD
    server_lr: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = 1e-3

    def __post_init__(self):
        if self.kind not in (FEDAVG, FEDOPT, FEDNOVA):
            raise ValueError(f"unknown aggregator kind: {self.kind!r}")
        if self.server_opt not in (SERVER_SGD, SERVER_ADAM):
            raise ValueError(f"unknown server optimizer: {self.server_opt!r}")
        if not self.server_lr > 0:
            raise ValueError("server_lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must be in [0, 1)")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")


@dataclass
class ServerState:
    round: int
    global_params: np.ndarray
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None


def new_server_state(initial_params, agg: AggregatorConfig) -> ServerState:
    p = as_vector(initial_params)
    if agg.kind == FEDOPT and agg.server_opt == SERVER_ADAM:
        return ServerState(0, p, np.zeros_like(p), np.zeros_like(p))
    return ServerState(0, p)


@dataclass
class ClientResult:
    client_id: int
    params: np.ndarray
    num_samples: int
    train_loss: float
    local_steps: int

    def __post_init__(self):
        self.params = as_vector(self.params)
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    test_acc: float
    test_loss: float
    train_loss: float
    wall_time_ms: int


def sample_cohort(cfg: FederationConfig, round_index: int) -> list:
    """C distinct client ids for round t, sorted ascending."""
    rng = np.random.default_rng(derive_seed(cfg.sampling_seed, "cohort", round_index))
    ids = rng.choice(cfg.num_clients, size=cfg.clients_per_round, replace=False)
    return sorted(int(i) for i in ids)


def _sorted_results(results) -> list:
    if not results:
        raise ValueError("cannot aggregate zero client results")
    ordered = sorted(results, key=lambda r: r.client_id)
    ids = [r.client_id for r in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client_id in results")
    return ordered


def aggregate_fedavg(results) -> np.ndarray:
    """Weighted average with weights n_k / n over the reporting cohort."""
    ordered = _sorted_results(results)
    total = sum(r.num_samples for r in ordered)
    weights = [r.num_samples / total for r in ordered]
    return weighted_sum([r.params for r in ordered], weights)


def aggregate_fedopt(state: ServerState, results, agg: AggregatorConfig) -> np.ndarray:
    """Server-optimizer step on the pseudo-gradient avg(results) - W_t.

    The Adam variant keeps its moment vectors on ``state`` and updates them
    in place; there is no bias correction.
    """
    delta = aggregate_fedavg(results) - state.global_params
    if agg.server_opt == SERVER_SGD:
        return axpy(agg.server_lr, delta, state.global_params)
    state.adam_m = agg.beta1 * state.adam_m + (1.0 - agg.beta1) * delta
    state.adam_v = agg.beta2 * state.adam_v + (1.0 - agg.beta2) * elementwise_square(delta)
    step = elementwise_div_add(state.adam_m, state.adam_v, agg.tau)
    return axpy(agg.server_lr, step, state.global_params)


def aggregate_fednova(w_t: np.ndarray, results) -> np.ndarray:
    """Normalized averaging: per-step displacements recombined at a common scale."""
    w_t = as_vector(w_t)
    ordered = _sorted_results(results)
    total = sum(r.num_samples for r in ordered)
    weights = [r.num_samples / total for r in ordered]
    directions = [(w_t - r.params) / r.local_steps for r in ordered]
    tau_eff = sum(w * r.local_steps for w, r in zip(weights, ordered))
    combined = weighted_sum(directions, weights)
    return w_t - tau_eff * combined


def run_round(state: ServerState, fed: FederationConfig, runner,
              agg: AggregatorConfig, eval_fn=None) -> tuple:
    """Execute round t: sample, dispatch, barrier, aggregate, advance.

    ``runner`` is anything with run_cohort(round_index, cohort, global_params)
    returning one ClientResult per cohort member. ``eval_fn`` maps a parameter
    vector to a models.EvalResult; when omitted the test columns are NaN.
    Returns (state, RoundMetrics); ``state`` is updated in place.
    """
    started = time.perf_counter()
    cohort = sample_cohort(fed, state.round)
    results = runner.run_cohort(state.round, cohort, state.global_params)
    returned = sorted(r.client_id for r in results)
    if returned != cohort:
        raise RoundAbortError(
            f"round {state.round}: expected results from {cohort}, got {returned}"
        )
    for r in results:
        if r.params.shape != state.global_params.shape:
            raise RoundAbortError(
                f"round {state.round}: client {r.client_id} returned "
                f"{r.params.shape[0]} parameters, expected {state.global_params.shape[0]}"
            )
    if agg.kind == FEDAVG:
        new_params = aggregate_fedavg(results)
    elif agg.kind == FEDOPT:
        new_params = aggregate_fedopt(state, results, agg)
    else:
        new_params = aggregate_fednova(state.global_params, results)
    completed = state.round
    state.global_params = new_params
    state.round += 1
    train_loss = float(np.mean([r.train_loss for r in _sorted_results(results)]))
    test_acc = test_loss = math.nan
    if eval_fn is not None:
        ev = eval_fn(new_params)
        test_acc, test_loss = ev.accuracy, ev.mean_loss
    wall = int((time.perf_counter() - started) * 1000)
    return state, RoundMetrics(completed, test_acc, test_loss, train_loss, wall)


@dataclass
class TrainingResult:
    metrics: list
    final_params: np.ndarray
    server_state: ServerState
    client_states: dict | None  # populated in simulate mode only


def run_training(experiment, *, port: int | None = None) -> TrainingResult:
    """Run a full experiment: R rounds with periodic held-out evaluation.

    ``experiment`` is a config.ExperimentConfig. Evaluation happens after
    every eval_interval-th round and always after the last one; only those
    rounds produce metrics rows.
    """
    from . import transport  # deferred: transport depends on this module
    from .config import build_problem

    problem = build_problem(experiment)
    state = new_server_state(models.init_params(problem.model), experiment.aggregator)

    def eval_fn(p):
        return models.evaluate(problem.model, p, problem.test.features,
                               problem.test.labels)

    metrics = []
    fed = experiment.federation
    with transport.make_runner(experiment, problem, port=port) as runner:
        for t in range(fed.num_rounds):
            due = (t + 1) % experiment.eval_interval == 0 or t + 1 == fed.num_rounds
            _, row = run_round(state, fed, runner, experiment.aggregator,
                               eval_fn if due else None)
            if due:
                metrics.append(row)
        client_states = getattr(runner, "client_states", None)
    return TrainingResult(metrics=metrics, final_params=state.global_params,
                          server_state=state, client_states=client_states)


METRICS_HEADER = "round,test_acc,test_loss,train_loss,wall_time_ms"


def write_metrics_csv(metrics, path) -> None:
    """Write eval rows. The wall_time_ms column is written as 0 so that a
    repeated run produces byte-identical files; measured timings stay on the
    in-memory RoundMetrics."""
    lines = [METRICS_HEADER]
    for m in metrics:
        lines.append(f"{m.round},{m.test_acc!r},{m.test_loss!r},{m.train_loss!r},0")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_metrics_csv(path) -> list:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path}: missing metrics header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise ValueError(f"{path}: malformed row {ln!r}")
        rows.append(RoundMetrics(int(parts[0]), float(parts[1]), float(parts[2]),
                                 float(parts[3]), int(parts[4])))
    return rows
