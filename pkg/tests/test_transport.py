"""Tests for the wire protocol and both carriers.

The two golden encodings were hand-assembled byte by byte from the
documented little-endian layout and frozen as hex strings.
"""

import socket
import struct

import numpy as np
import pytest

from fedsim import transport
from fedsim.config import parse_config
from fedsim.server import run_training
from fedsim.transport import (
    CONTROL_CLIENT_ID,
    MSG_ACK,
    MSG_BROADCAST,
    MSG_CLIENT_RESULT,
    MSG_SHUTDOWN,
    BadMagicError,
    ConnectionClosedError,
    LengthMismatchError,
    RoundMessage,
    TruncatedError,
    UnknownTypeError,
    UnsupportedVersionError,
    decode,
    encode,
    hosted_clients,
    read_message,
    resolve_port,
    send_message,
)

# Shutdown, round 0, control client id: exactly 20 header bytes.
GOLDEN_SHUTDOWN_HEX = "c5fd010300000000ffffffff0000000000000000"

# Broadcast of params [1.0] to client 0 at round 0: header + count + IEEE 1.0.
GOLDEN_BROADCAST_HEX = (
    "c5fd"                  # magic 0xFDC5 little-endian
    "01"                    # version
    "01"                    # msg_type Broadcast
    "00000000"              # round u32
    "00000000"              # client_id u32
    "1000000000000000"      # payload_len u64 = 16
    "0100000000000000"      # param_count u64 = 1
    "000000000000f03f"      # f64 1.0
)


# ------------------------------------------------------------- golden bytes

def test_shutdown_golden_bytes():
    m = RoundMessage(MSG_SHUTDOWN, 0, CONTROL_CLIENT_ID)
    assert encode(m).hex() == GOLDEN_SHUTDOWN_HEX
    assert len(encode(m)) == 20


def test_broadcast_golden_bytes():
    m = RoundMessage(MSG_BROADCAST, 0, 0, params=np.array([1.0]))
    assert encode(m).hex() == GOLDEN_BROADCAST_HEX


# --------------------------------------------------------------- round trip

def test_roundtrip_all_types():
    msgs = [
        RoundMessage(MSG_BROADCAST, 3, 7, params=np.array([0.5, -1.25, 0.0])),
        RoundMessage(MSG_CLIENT_RESULT, 3, 7, params=np.array([2.0]),
                     num_samples=11, local_steps=4, train_loss=0.625),
        RoundMessage(MSG_SHUTDOWN, 0, CONTROL_CLIENT_ID),
        RoundMessage(MSG_ACK, 0, 2),
    ]
    for m in msgs:
        assert decode(encode(m)) == m


def test_roundtrip_preserves_exact_floats():
    vals = np.array([0.1, 1/3, 1e-300, 1e300, -0.0, 2.0**-1074])
    m = RoundMessage(MSG_BROADCAST, 1, 0, params=vals)
    back = decode(encode(m))
    assert back.params.tobytes() == vals.tobytes()


def test_roundtrip_empty_and_large_payloads():
    empty = RoundMessage(MSG_BROADCAST, 0, 0, params=np.zeros(0))
    assert decode(encode(empty)) == empty
    big = RoundMessage(MSG_BROADCAST, 0, 0,
                       params=np.random.default_rng(1).standard_normal(100_000))
    assert decode(encode(big)) == big


def test_encode_validates_fields():
    with pytest.raises(ValueError):
        encode(RoundMessage(9, 0, 0))
    with pytest.raises(ValueError):
        encode(RoundMessage(MSG_BROADCAST, 2**32, 0, params=np.zeros(1)))
    with pytest.raises(ValueError):
        encode(RoundMessage(MSG_BROADCAST, 0, -1, params=np.zeros(1)))
    with pytest.raises(ValueError):
        encode(RoundMessage(MSG_BROADCAST, 0, 0))  # params missing
    with pytest.raises(ValueError):
        encode(RoundMessage(MSG_CLIENT_RESULT, 0, 0, params=np.zeros(1)))


# ------------------------------------------------------------ decode errors

def valid_broadcast_bytes():
    return encode(RoundMessage(MSG_BROADCAST, 5, 2, params=np.array([1.0, 2.0])))


def test_decode_bad_magic():
    data = bytearray(valid_broadcast_bytes())
    data[0] ^= 0xFF
    with pytest.raises(BadMagicError):
        decode(bytes(data))


def test_decode_bad_version():
    data = bytearray(valid_broadcast_bytes())
    data[2] = 9
    with pytest.raises(UnsupportedVersionError):
        decode(bytes(data))


def test_decode_unknown_type():
    data = bytearray(valid_broadcast_bytes())
    data[3] = 9
    with pytest.raises(UnknownTypeError):
        decode(bytes(data))


def test_decode_truncated_header_and_payload():
    data = valid_broadcast_bytes()
    with pytest.raises(TruncatedError):
        decode(data[:10])
    with pytest.raises(TruncatedError):
        decode(data[:25])
    with pytest.raises(TruncatedError):
        decode(b"")


def test_decode_trailing_bytes():
    with pytest.raises(LengthMismatchError):
        decode(valid_broadcast_bytes() + b"\x00")


def test_decode_param_count_mismatch():
    data = bytearray(valid_broadcast_bytes())
    # payload starts at byte 20; lie about the param count
    struct.pack_into("<Q", data, 20, 5)
    with pytest.raises(LengthMismatchError):
        decode(bytes(data))


def test_decode_control_with_payload():
    hdr = struct.pack("<HBBIIQ", transport.MAGIC, transport.VERSION,
                      MSG_SHUTDOWN, 0, CONTROL_CLIENT_ID, 4)
    with pytest.raises(LengthMismatchError):
        decode(hdr + b"\x00\x00\x00\x00")


# ------------------------------------------------------------ stream framing

def test_fifo_over_socketpair():
    a, b = socket.socketpair()
    try:
        sent = [RoundMessage(MSG_BROADCAST, t, 0, params=np.array([float(t)]))
                for t in range(5)]
        for m in sent:
            send_message(a, m)
        got = [read_message(b) for _ in range(5)]
        assert got == sent  # per-pair FIFO order
    finally:
        a.close()
        b.close()


def test_read_message_on_closed_peer():
    a, b = socket.socketpair()
    a.close()
    try:
        with pytest.raises(ConnectionClosedError):
            read_message(b)
    finally:
        b.close()


def test_read_message_partial_then_closed():
    a, b = socket.socketpair()
    try:
        a.sendall(valid_broadcast_bytes()[:12])
        a.close()
        with pytest.raises(ConnectionClosedError):
            read_message(b)
    finally:
        b.close()


# --------------------------------------------------------- endpoint mapping

def test_hosted_clients_partition_all_clients():
    for num_workers in (1, 2, 3, 4):
        assigned = [hosted_clients(w, num_workers, 10) for w in range(num_workers)]
        merged = sorted(k for ids in assigned for k in ids)
        assert merged == list(range(10))
    assert hosted_clients(1, 4, 10) == (1, 5, 9)


def test_resolve_port_precedence(monkeypatch):
    monkeypatch.delenv("FEDSIM_PORT", raising=False)
    assert resolve_port() == transport.DEFAULT_PORT
    monkeypatch.setenv("FEDSIM_PORT", "5000")
    assert resolve_port() == 5000
    assert resolve_port(6000) == 6000


# ------------------------------------------------------------- the carriers

def experiment_doc(mode, rounds=3):
    return {
        "dataset": {"kind": "synthetic", "num_classes": 3, "dim": 4,
                    "samples_per_class": 20, "class_separation": 1.0},
        "partition": {"kind": "lda", "alpha": 1.0},
        "model": {"kind": "mlp", "hidden_dim": 5},
        "client": {"local_epochs": 2, "batch_size": 4, "base_lr": 0.1,
                   "optimizer": "momentum_sgd", "scheduler": "linear_decay"},
        "federation": {"num_clients": 5, "clients_per_round": 3,
                       "num_rounds": rounds},
        "aggregator": {"kind": "fedopt", "server_opt": "adam", "server_lr": 0.1},
        "mode": mode,
        "eval_interval": 1,
        "master_seed": 99,
    }


def free_port():
    with socket.create_server(("127.0.0.1", 0)) as s:
        return s.getsockname()[1]


def test_inproc_runner_tracks_client_states():
    cfg = parse_config(experiment_doc("simulate"))
    out = run_training(cfg)
    assert out.client_states is not None
    assert sorted(out.client_states) == [0, 1, 2, 3, 4]
    assert len(out.metrics) == 3


def test_socket_runner_matches_inproc_bitwise():
    doc_sim = experiment_doc("simulate")
    doc_sock = experiment_doc({"kind": "sockets", "workers": 2})
    sim = run_training(parse_config(doc_sim))
    sock = run_training(parse_config(doc_sock), port=free_port())
    assert sim.final_params.tobytes() == sock.final_params.tobytes()
    for a, b in zip(sim.metrics, sock.metrics):
        assert (a.round, a.test_acc, a.test_loss, a.train_loss) == \
               (b.round, b.test_acc, b.test_loss, b.train_loss)


def test_inproc_runner_routes_through_codec(monkeypatch):
    # corrupting encode must break the in-process carrier too: the simulated
    # path really does serialize every message
    cfg = parse_config(experiment_doc("simulate", rounds=1))

    def broken_encode(m):
        raise transport.ProtocolError("codec disabled")

    monkeypatch.setattr(transport, "encode", broken_encode)
    with pytest.raises(transport.ProtocolError):
        run_training(cfg)
