"""Tests for local client training.

The optimizer arithmetic is checked against stand-in objectives whose
trajectories are known in closed form: a quadratic surrogate for plain SGD
and a constant-gradient stream for the momentum recursion. Both reference
trajectories are recomputed inside the test with scalar arithmetic, an
independent path from the vectorized update loop.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from fedsim import client as client_mod
from fedsim import models
from fedsim.params import DimensionMismatchError
from fedsim.client import (
    ClientConfig,
    ClientShard,
    ClientState,
    client_update,
    effective_lr,
    momentum_is_cleared,
)


def make_stub(grad_fn, loss_fn=None):
    """A drop-in for the models module with a custom objective."""
    return SimpleNamespace(
        Batch=lambda features, labels: SimpleNamespace(features=features,
                                                       labels=labels),
        parameter_count=lambda spec: 1,
        loss=loss_fn or (lambda spec, w, b: 0.0),
        grad=grad_fn,
    )


def one_point_state(client_id=0):
    return ClientState(client_id, ClientShard(np.zeros((1, 1)), np.zeros(1, dtype=int)))


STUB_SPEC = SimpleNamespace(input_dim=1)


# -------------------------------------------------------------- lr schedule

def test_effective_lr_constant_without_scheduler():
    cfg = ClientConfig(local_epochs=1, batch_size=1, base_lr=0.3)
    assert effective_lr(cfg, 0) == 0.3
    assert effective_lr(cfg, 10_000) == 0.3


def test_effective_lr_linear_decay_midpoint():
    cfg = ClientConfig(local_epochs=1, batch_size=1, base_lr=0.1,
                       scheduler="linear_decay", total_rounds=100)
    assert effective_lr(cfg, 0) == 0.1
    assert effective_lr(cfg, 50) == 0.05
    assert effective_lr(cfg, 99) == 0.1 * (1.0 - 99 / 100)


def test_effective_lr_rejects_rounds_outside_horizon():
    cfg = ClientConfig(local_epochs=1, batch_size=1, base_lr=0.1,
                       scheduler="linear_decay", total_rounds=10)
    with pytest.raises(ValueError):
        effective_lr(cfg, 10)
    with pytest.raises(ValueError):
        effective_lr(cfg, -1)


def test_client_config_validation():
    with pytest.raises(ValueError):
        ClientConfig(local_epochs=0, batch_size=1, base_lr=0.1)
    with pytest.raises(ValueError):
        ClientConfig(local_epochs=1, batch_size=1, base_lr=0.0)
    with pytest.raises(ValueError):
        ClientConfig(local_epochs=1, batch_size=1, base_lr=0.1, optimizer="adamw")
    with pytest.raises(ValueError):
        ClientConfig(local_epochs=1, batch_size=1, base_lr=0.1, momentum_beta=1.0)
    with pytest.raises(ValueError):
        ClientConfig(local_epochs=1, batch_size=1, base_lr=0.1,
                     scheduler="linear_decay")  # total_rounds unset


# ------------------------------------------------------- quadratic surrogate

def test_sgd_converges_on_quadratic_surrogate(monkeypatch):
    # objective 0.5*(w-3)^2 has gradient w-3; 500 steps at lr 0.1 from 0
    monkeypatch.setattr(client_mod, "models",
                        make_stub(lambda spec, w, b: w - 3.0))
    cfg = ClientConfig(local_epochs=500, batch_size=1, base_lr=0.1)
    upd = client_update(one_point_state(), cfg, STUB_SPEC, np.zeros(1), 0)
    assert upd.local_steps == 500
    assert abs(upd.params[0] - 3.0) <= 1e-6


def test_sgd_quadratic_trajectory_matches_closed_form(monkeypatch):
    monkeypatch.setattr(client_mod, "models",
                        make_stub(lambda spec, w, b: w - 3.0))
    cfg = ClientConfig(local_epochs=10, batch_size=1, base_lr=0.1)
    upd = client_update(one_point_state(), cfg, STUB_SPEC, np.zeros(1), 0)
    w_ref = np.float64(0.0)
    for _ in range(10):
        w_ref = w_ref - np.float64(0.1) * (w_ref - np.float64(3.0))
    assert upd.params[0] == w_ref  # same arithmetic, bit-identical
    assert abs(upd.params[0] - 1.9539646797) <= 1e-12  # frozen decimal value


# ------------------------------------------------------------------ momentum

def test_momentum_three_step_recursion(monkeypatch):
    # constant gradient 1.0: buf_s = 1 + 0.9*buf_{s-1}; w_s = w_{s-1} - 0.1*buf_s
    monkeypatch.setattr(client_mod, "models",
                        make_stub(lambda spec, w, b: np.ones_like(w)))
    cfg = ClientConfig(local_epochs=3, batch_size=1, base_lr=0.1,
                       optimizer="momentum_sgd", momentum_beta=0.9)
    state = one_point_state()
    upd = client_update(state, cfg, STUB_SPEC, np.zeros(1), 0)
    buf, w = np.float64(0.0), np.float64(0.0)
    for _ in range(3):
        buf = np.float64(0.9) * buf + np.float64(1.0)
        w = w - np.float64(0.1) * buf
    assert upd.params[0] == w
    assert abs(upd.params[0] - (-0.561)) <= 1e-15  # frozen hand value
    assert state.momentum_buffer is not None
    assert abs(state.momentum_buffer[0] - buf) == 0.0


def test_momentum_buffer_cleared_each_round(monkeypatch):
    monkeypatch.setattr(client_mod, "models",
                        make_stub(lambda spec, w, b: np.ones_like(w)))
    cfg = ClientConfig(local_epochs=2, batch_size=1, base_lr=0.1,
                       optimizer="momentum_sgd", momentum_beta=0.9)
    state = one_point_state()
    for t in range(3):
        client_update(state, cfg, STUB_SPEC, np.zeros(1), t)
        assert momentum_is_cleared(state)
    assert state.first_step_plain_sgd == [True, True, True]


def test_two_momentum_rounds_differ_from_one_long_round():
    # same data, same step count: clearing the buffer between rounds changes
    # the trajectory relative to one uninterrupted 2-epoch round
    rng = np.random.default_rng(21)
    shard = ClientShard(rng.normal(0, 1, (8, 3)), rng.integers(0, 2, 8))
    spec = models.ModelSpec(kind="logistic_regression", input_dim=3,
                            num_classes=2, init_seed=1)
    w0 = models.init_params(spec)
    cfg1 = ClientConfig(local_epochs=1, batch_size=8, base_lr=0.2,
                        optimizer="momentum_sgd", shuffle_seed=7)
    cfg2 = ClientConfig(local_epochs=2, batch_size=8, base_lr=0.2,
                        optimizer="momentum_sgd", shuffle_seed=7)

    state = ClientState(0, shard)
    w = client_update(state, cfg1, spec, w0, 0).params
    w_two_rounds = client_update(state, cfg1, spec, w, 1).params

    w_one_round = client_update(ClientState(0, shard), cfg2, spec, w0, 0).params
    assert np.max(np.abs(w_two_rounds - w_one_round)) > 1e-9


# ------------------------------------------------------------- proximal term

def test_prox_zero_is_bit_identical_to_plain():
    rng = np.random.default_rng(31)
    shard = ClientShard(rng.normal(0, 1, (10, 4)), rng.integers(0, 3, 10))
    spec = models.ModelSpec(kind="logistic_regression", input_dim=4,
                            num_classes=3, init_seed=2)
    w0 = models.init_params(spec)
    base = ClientConfig(local_epochs=2, batch_size=4, base_lr=0.1, shuffle_seed=5)
    prox = ClientConfig(local_epochs=2, batch_size=4, base_lr=0.1, shuffle_seed=5,
                        prox_mu=0.0)
    a = client_update(ClientState(0, shard), base, spec, w0, 0)
    b = client_update(ClientState(0, shard), prox, spec, w0, 0)
    assert np.array_equal(a.params, b.params)
    assert a.train_loss == b.train_loss


def test_prox_pulls_toward_global_params(monkeypatch):
    # zero data gradient: training must leave w exactly at the anchor, and a
    # positive mu must still do so while a displaced start is pulled back
    monkeypatch.setattr(client_mod, "models",
                        make_stub(lambda spec, w, b: np.zeros_like(w)))
    cfg = ClientConfig(local_epochs=5, batch_size=1, base_lr=0.1, prox_mu=1.0)
    upd = client_update(one_point_state(), cfg, STUB_SPEC, np.array([2.0]), 0)
    assert upd.params[0] == 2.0  # w starts at the anchor; prox term is zero there


def test_prox_changes_multi_step_trajectory(monkeypatch):
    # gradient constant 1.0 moves w away from the anchor; mu > 0 resists
    monkeypatch.setattr(client_mod, "models",
                        make_stub(lambda spec, w, b: np.ones_like(w)))
    plain = ClientConfig(local_epochs=4, batch_size=1, base_lr=0.1)
    anchored = ClientConfig(local_epochs=4, batch_size=1, base_lr=0.1, prox_mu=2.0)
    w_plain = client_update(one_point_state(), plain, STUB_SPEC, np.zeros(1), 0)
    w_anchored = client_update(one_point_state(), anchored, STUB_SPEC, np.zeros(1), 0)
    # first steps agree (w == anchor), later ones diverge
    assert w_plain.params[0] < w_anchored.params[0] < 0.0


# ------------------------------------------------------ batching and metrics

def test_epoch_batches_cover_shard_each_epoch(monkeypatch):
    seen = []

    def spy_grad(spec, w, b):
        seen.append(np.asarray(b.features)[:, 0].astype(int).tolist())
        return np.zeros_like(w)

    monkeypatch.setattr(client_mod, "models", make_stub(spy_grad))
    n = 7
    shard = ClientShard(np.arange(n, dtype=float).reshape(-1, 1),
                        np.zeros(n, dtype=int))
    cfg = ClientConfig(local_epochs=2, batch_size=3, base_lr=0.1, shuffle_seed=3)
    upd = client_update(ClientState(4, shard), cfg, STUB_SPEC, np.zeros(1), 0)
    # ceil(7/3) = 3 batches per epoch, sizes 3+3+1, each epoch a permutation
    assert upd.local_steps == 6
    assert [len(b) for b in seen] == [3, 3, 1, 3, 3, 1]
    assert sorted(i for b in seen[:3] for i in b) == list(range(n))
    assert sorted(i for b in seen[3:] for i in b) == list(range(n))
    assert seen[:3] != seen[3:]  # epochs reshuffle


def test_shuffle_differs_across_rounds_and_clients(monkeypatch):
    orders = {}

    def spy_grad(spec, w, b):
        orders.setdefault(key, []).append(
            np.asarray(b.features)[:, 0].astype(int).tolist())
        return np.zeros_like(w)

    monkeypatch.setattr(client_mod, "models", make_stub(spy_grad))
    shard = ClientShard(np.arange(6, dtype=float).reshape(-1, 1),
                        np.zeros(6, dtype=int))
    cfg = ClientConfig(local_epochs=1, batch_size=6, base_lr=0.1, shuffle_seed=9)
    for key in [(0, 0), (0, 1), (1, 0)]:
        client_id, rnd = key
        client_update(ClientState(client_id, shard), cfg, STUB_SPEC,
                      np.zeros(1), rnd)
    assert orders[(0, 0)] != orders[(0, 1)]
    assert orders[(0, 0)] != orders[(1, 0)]


def test_train_loss_recorded_before_stepping():
    # single full-batch step: the reported loss is the loss at the incoming
    # parameters, not after the update
    rng = np.random.default_rng(17)
    shard = ClientShard(rng.normal(0, 1, (6, 2)), rng.integers(0, 2, 6))
    spec = models.ModelSpec(kind="logistic_regression", input_dim=2,
                            num_classes=2, init_seed=3)
    w0 = models.init_params(spec)
    cfg = ClientConfig(local_epochs=1, batch_size=6, base_lr=0.5)
    upd = client_update(ClientState(0, shard), cfg, spec, w0, 0)
    expected = models.loss(spec, w0, models.Batch(shard.features, shard.labels))
    assert upd.train_loss == expected
    assert upd.num_samples == 6
    assert upd.local_steps == 1


def test_lr_held_constant_within_round(monkeypatch):
    # with linear decay over 2 rounds, round 1 uses lr 0.05 for every step
    monkeypatch.setattr(client_mod, "models",
                        make_stub(lambda spec, w, b: np.ones_like(w)))
    cfg = ClientConfig(local_epochs=3, batch_size=1, base_lr=0.1,
                       scheduler="linear_decay", total_rounds=2)
    upd = client_update(one_point_state(), cfg, STUB_SPEC, np.zeros(1), 1)
    assert abs(upd.params[0] - (-0.15)) <= 1e-15  # three equal steps at 0.05


def test_client_update_rejects_mismatched_globals():
    shard = ClientShard(np.zeros((2, 3)), np.zeros(2, dtype=int))
    spec = models.ModelSpec(kind="logistic_regression", input_dim=3,
                            num_classes=2, init_seed=0)
    cfg = ClientConfig(local_epochs=1, batch_size=2, base_lr=0.1)
    with pytest.raises(DimensionMismatchError):
        client_update(ClientState(0, shard), cfg, spec, np.zeros(5), 0)
