"""Client-side local training for one communication round.

``client_update`` implements the local half of the protocol: receive the
global parameters, run E epochs of (momentum) SGD over the local shard, and
report the final parameters together with the shard size and mean training
loss. The momentum buffer is cleared whenever the global model arrives, so
accumulation never crosses a round boundary. The learning rate can decay
linearly in the communication round and is held constant within a round.

An optional proximal correction g += mu*(W - W_global) anchors local
training to the broadcast model; mu=0 leaves the plain path untouched.
"""

from dataclasses import dataclass, field

import numpy as np

from . import models
from .params import DimensionMismatchError, as_vector
from .seeding import derive_seed

SGD = "sgd"
MOMENTUM_SGD = "momentum_sgd"

SCHEDULER_NONE = "none"
LINEAR_DECAY = "linear_decay"


@dataclass(frozen=True)
class ClientConfig:
    local_epochs: int
    batch_size: int
    base_lr: float
    optimizer: str = SGD
    momentum_beta: float = 0.9
    scheduler: str = SCHEDULER_NONE
    total_rounds: int = 0
    prox_mu: float = 0.0
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.base_lr > 0:
            raise ValueError("base_lr must be > 0")
        if self.optimizer not in (SGD, MOMENTUM_SGD):
            raise ValueError(f"unknown optimizer: {self.optimizer!r}")
        if not 0 <= self.momentum_beta < 1:
            raise ValueError("momentum_beta must be in [0, 1)")
        if self.scheduler not in (SCHEDULER_NONE, LINEAR_DECAY):
            raise ValueError(f"unknown scheduler: {self.scheduler!r}")
        if self.scheduler == LINEAR_DECAY and self.total_rounds < 1:
            raise ValueError("linear_decay needs total_rounds >= 1")
        if self.prox_mu < 0:
            raise ValueError("prox_mu must be >= 0")


@dataclass
class ClientShard:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("shard needs (n, d) features and (n,) labels")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("shard features and labels disagree on n")
        if self.num_samples < 1:
            raise ValueError("client shard is empty")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]


@dataclass
class ClientState:
    client_id: int
    shard: ClientShard
    momentum_buffer: np.ndarray | None = None
    # One flag per completed round: did the first optimizer step of the round
    # move W by exactly -lr*g? With a correctly cleared buffer the first
    # momentum update is beta*0 + g == g, so this is the observable form of
    # momentum clearing (not a restatement of the clearing code itself).
    first_step_plain_sgd: list = field(default_factory=list)


@dataclass(frozen=True)
class LocalUpdate:
    params: np.ndarray
    num_samples: int
    train_loss: float
    local_steps: int


def effective_lr(cfg: ClientConfig, round_index: int) -> float:
    """Learning rate for a round; decay depends on the round, never the epoch."""
    if round_index < 0:
        raise ValueError("round_index must be >= 0")
    if cfg.scheduler == SCHEDULER_NONE:
        return cfg.base_lr
    if round_index >= cfg.total_rounds:
        raise ValueError(
            f"round {round_index} outside linear_decay horizon {cfg.total_rounds}"
        )
    return cfg.base_lr * (1.0 - round_index / cfg.total_rounds)


def _epoch_batches(n: int, cfg: ClientConfig, client_id: int, round_index: int,
                   epoch: int):
    """Consecutive batches over a fresh permutation; the short tail is kept."""
    seed = derive_seed(cfg.shuffle_seed, "shuffle", client_id, round_index, epoch)
    order = np.random.default_rng(seed).permutation(n)
    for start in range(0, n, cfg.batch_size):
        yield order[start:start + cfg.batch_size]


def client_update(state: ClientState, cfg: ClientConfig, spec: models.ModelSpec,
                  global_params: np.ndarray, round_index: int) -> LocalUpdate:
    """Run one round of local training and report the result."""
    global_params = as_vector(global_params)
    if global_params.shape[0] != models.parameter_count(spec):
        raise DimensionMismatchError(
            f"global params have length {global_params.shape[0]}, "
            f"model expects {models.parameter_count(spec)}"
        )
    if state.shard.features.shape[1] != spec.input_dim:
        raise DimensionMismatchError(
            f"shard features have dim {state.shard.features.shape[1]}, "
            f"model expects {spec.input_dim}"
        )
    w = global_params.copy()
    use_momentum = cfg.optimizer == MOMENTUM_SGD
    buf = np.zeros_like(w) if use_momentum else None
    lr = effective_lr(cfg, round_index)

    n = state.shard.num_samples
    loss_sum = 0.0
    steps = 0
    first_step_flag = None
    for epoch in range(cfg.local_epochs):
        for batch_idx in _epoch_batches(n, cfg, state.client_id, round_index, epoch):
            batch = models.Batch(state.shard.features[batch_idx],
                                 state.shard.labels[batch_idx])
            loss_sum += models.loss(spec, w, batch)
            g = models.grad(spec, w, batch)
            if cfg.prox_mu > 0:
                g = g + cfg.prox_mu * (w - global_params)
            if use_momentum:
                buf = cfg.momentum_beta * buf + g
                if steps == 0:
                    first_step_flag = bool(np.array_equal(buf, g))
                w = w - lr * buf
            else:
                if steps == 0:
                    first_step_flag = True
                w = w - lr * g
            steps += 1

    state.momentum_buffer = buf
    state.first_step_plain_sgd.append(first_step_flag)
    return LocalUpdate(params=w, num_samples=n,
                       train_loss=loss_sum / steps, local_steps=steps)


def momentum_is_cleared(state: ClientState) -> bool:
    """Whether the most recent round started from a zeroed momentum buffer.

    Inferred from the recorded first-step behavior rather than by trusting
    the buffer assignment: a non-zero carried-over buffer would make the
    first momentum step differ from a plain SGD step.
    """
    if not state.first_step_plain_sgd:
        return state.momentum_buffer is None or not state.momentum_buffer.any()
    return state.first_step_plain_sgd[-1]
