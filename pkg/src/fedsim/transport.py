"""Round messages, their binary encoding, and the two carriers.

Every server/client exchange is a RoundMessage with a fixed little-endian
layout: magic u16 0xFDC5, version u8, msg_type u8, round u32, client_id u32,
payload_len u64, payload. Broadcast carries a parameter vector; ClientResult
carries (num_samples, local_steps, train_loss) plus the updated vector;
Shutdown and Ack have empty payloads. client_id 0xFFFFFFFF marks control
messages not addressed to a particular client.

Two carriers move these messages:

* InProcRunner executes clients in the server process. Messages still pass
  through encode/decode so the simulated path exercises the exact bytes the
  socket path would.
* SocketRunner spawns worker processes connected over TCP; each worker hosts
  the clients with id % num_workers == worker_id and rebuilds its shards
  deterministically from the experiment config, so nothing but parameters
  and results ever crosses the wire.

Both carriers produce bit-identical training runs for the same config.
"""

import multiprocessing
import os
import socket
import struct
import time
from dataclasses import dataclass

import numpy as np

from .client import ClientState, client_update
from .server import ClientResult, RoundAbortError

MAGIC = 0xFDC5
VERSION = 1
DEFAULT_PORT = 9898

MSG_BROADCAST = 1
MSG_CLIENT_RESULT = 2
MSG_SHUTDOWN = 3
MSG_ACK = 4
_KNOWN_TYPES = (MSG_BROADCAST, MSG_CLIENT_RESULT, MSG_SHUTDOWN, MSG_ACK)

CONTROL_CLIENT_ID = 0xFFFFFFFF

_HEADER = struct.Struct("<HBBIIQ")
_RESULT_FIXED = struct.Struct("<QQdQ")  # num_samples, local_steps, train_loss, count


class ProtocolError(Exception):
    """Base for all wire-format violations."""


class BadMagicError(ProtocolError):
    pass


class UnsupportedVersionError(ProtocolError):
    pass


class UnknownTypeError(ProtocolError):
    pass


class TruncatedError(ProtocolError):
    pass


class LengthMismatchError(ProtocolError):
    pass


class ConnectionClosedError(RuntimeError):
    """The peer closed the connection mid-message."""


@dataclass(eq=False)
class RoundMessage:
    msg_type: int
    round: int
    client_id: int
    params: np.ndarray | None = None
    num_samples: int | None = None
    local_steps: int | None = None
    train_loss: float | None = None

    def __eq__(self, other):
        if not isinstance(other, RoundMessage):
            return NotImplemented
        if (self.msg_type, self.round, self.client_id, self.num_samples,
                self.local_steps, self.train_loss) != \
                (other.msg_type, other.round, other.client_id, other.num_samples,
                 other.local_steps, other.train_loss):
            return False
        if (self.params is None) != (other.params is None):
            return False
        return self.params is None or np.array_equal(self.params, other.params)


def _check_u32(name: str, value: int) -> int:
    if not 0 <= value <= 0xFFFFFFFF:
        raise ValueError(f"{name} does not fit in u32: {value}")
    return value


def encode(m: RoundMessage) -> bytes:
    """Serialize a well-formed message to its exact wire bytes."""
    if m.msg_type not in _KNOWN_TYPES:
        raise ValueError(f"unknown msg_type {m.msg_type}")
    _check_u32("round", m.round)
    _check_u32("client_id", m.client_id)
    if m.msg_type == MSG_BROADCAST:
        if m.params is None:
            raise ValueError("Broadcast requires params")
        values = np.ascontiguousarray(m.params, dtype="<f8")
        payload = struct.pack("<Q", values.shape[0]) + values.tobytes()
    elif m.msg_type == MSG_CLIENT_RESULT:
        if m.params is None or m.num_samples is None or m.local_steps is None \
                or m.train_loss is None:
            raise ValueError("ClientResult requires params, counts, and train_loss")
        values = np.ascontiguousarray(m.params, dtype="<f8")
        payload = _RESULT_FIXED.pack(m.num_samples, m.local_steps, m.train_loss,
                                     values.shape[0]) + values.tobytes()
    else:
        payload = b""
    header = _HEADER.pack(MAGIC, VERSION, m.msg_type, m.round, m.client_id,
                          len(payload))
    return header + payload


def _validate_header(data: bytes):
    if len(data) < _HEADER.size:
        raise TruncatedError(f"need {_HEADER.size} header bytes, have {len(data)}")
    magic, version, msg_type, round_index, client_id, payload_len = \
        _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"magic {magic:#06x} at offset 0, expected {MAGIC:#06x}")
    if version != VERSION:
        raise UnsupportedVersionError(f"version {version}, expected {VERSION}")
    if msg_type not in _KNOWN_TYPES:
        raise UnknownTypeError(f"msg_type {msg_type}")
    return msg_type, round_index, client_id, payload_len


def decode(data: bytes) -> RoundMessage:
    """Parse wire bytes; total over arbitrary input, each defect distinct."""
    msg_type, round_index, client_id, payload_len = _validate_header(data)
    available = len(data) - _HEADER.size
    if available < payload_len:
        raise TruncatedError(f"payload declares {payload_len} bytes, {available} present")
    if available > payload_len:
        raise LengthMismatchError(
            f"{available - payload_len} bytes beyond the declared payload"
        )
    payload = data[_HEADER.size:]
    if msg_type in (MSG_SHUTDOWN, MSG_ACK):
        if payload_len != 0:
            raise LengthMismatchError(f"control message with {payload_len} payload bytes")
        return RoundMessage(msg_type, round_index, client_id)
    if msg_type == MSG_BROADCAST:
        if payload_len < 8:
            raise LengthMismatchError("Broadcast payload shorter than its count field")
        (count,) = struct.unpack_from("<Q", payload)
        if payload_len != 8 + 8 * count:
            raise LengthMismatchError(
                f"Broadcast declares {count} values but payload is {payload_len} bytes"
            )
        params = np.frombuffer(payload, dtype="<f8", count=count, offset=8).copy()
        return RoundMessage(msg_type, round_index, client_id, params=params)
    if payload_len < _RESULT_FIXED.size:
        raise LengthMismatchError("ClientResult payload shorter than its fixed fields")
    num_samples, local_steps, train_loss, count = _RESULT_FIXED.unpack_from(payload)
    if payload_len != _RESULT_FIXED.size + 8 * count:
        raise LengthMismatchError(
            f"ClientResult declares {count} values but payload is {payload_len} bytes"
        )
    params = np.frombuffer(payload, dtype="<f8", count=count,
                           offset=_RESULT_FIXED.size).copy()
    return RoundMessage(msg_type, round_index, client_id, params=params,
                        num_samples=num_samples, local_steps=local_steps,
                        train_loss=train_loss)


def send_message(sock, m: RoundMessage) -> None:
    sock.sendall(encode(m))


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise ConnectionClosedError(f"peer closed with {remaining} bytes pending")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(sock) -> RoundMessage:
    """Read one framed message from a stream socket."""
    header = _recv_exact(sock, _HEADER.size)
    _, _, _, payload_len = _validate_header(header)
    payload = _recv_exact(sock, payload_len) if payload_len else b""
    return decode(header + payload)


@dataclass(frozen=True)
class Endpoint:
    role: str  # "server" or "worker"
    worker_id: int
    clients_hosted: tuple


def hosted_clients(worker_id: int, num_workers: int, num_clients: int) -> tuple:
    """Clients served by one worker: ids congruent to it mod num_workers."""
    return tuple(k for k in range(num_clients) if k % num_workers == worker_id)


class InProcRunner:
    """Runs every client in the server process, via the wire codec."""

    def __init__(self, model_spec, client_cfg, shards):
        self.model_spec = model_spec
        self.client_cfg = client_cfg
        self.client_states = {k: ClientState(k, shard)
                              for k, shard in enumerate(shards)}

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def run_cohort(self, round_index: int, cohort, global_params) -> list:
        results = []
        for k in cohort:
            out = decode(encode(RoundMessage(MSG_BROADCAST, round_index, k,
                                             params=global_params)))
            upd = client_update(self.client_states[out.client_id], self.client_cfg,
                                self.model_spec, out.params, out.round)
            back = decode(encode(RoundMessage(
                MSG_CLIENT_RESULT, round_index, k, params=upd.params,
                num_samples=upd.num_samples, local_steps=upd.local_steps,
                train_loss=upd.train_loss)))
            results.append(ClientResult(back.client_id, back.params,
                                        back.num_samples, back.train_loss,
                                        back.local_steps))
        return results


def worker_main(config_dict: dict, worker_id: int, num_workers: int,
                host: str, port: int) -> None:
    """Entry point of one worker process.

    Rebuilds the experiment deterministically from its config, serves
    client_update requests for its hosted clients, and exits on Shutdown.
    """
    from .config import build_problem, parse_config

    cfg = parse_config(config_dict)
    problem = build_problem(cfg)
    mine = hosted_clients(worker_id, num_workers, cfg.federation.num_clients)
    states = {k: ClientState(k, problem.shards[k]) for k in mine}

    sock = None
    deadline = time.monotonic() + 10.0
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=10.0)
            break
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)
    try:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        send_message(sock, RoundMessage(MSG_ACK, 0, worker_id))
        while True:
            m = read_message(sock)
            if m.msg_type == MSG_SHUTDOWN:
                break
            if m.msg_type != MSG_BROADCAST:
                raise ProtocolError(f"worker got unexpected msg_type {m.msg_type}")
            upd = client_update(states[m.client_id], cfg.client, problem.model,
                                m.params, m.round)
            send_message(sock, RoundMessage(
                MSG_CLIENT_RESULT, m.round, m.client_id, params=upd.params,
                num_samples=upd.num_samples, local_steps=upd.local_steps,
                train_loss=upd.train_loss))
    finally:
        sock.close()


class SocketRunner:
    """Drives worker processes over TCP; one connection per worker."""

    client_states = None  # client state lives in the workers

    def __init__(self, config_dict: dict, num_workers: int, port: int,
                 host: str = "127.0.0.1", grace: float = 10.0):
        if num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        self._config = config_dict
        self._num_workers = num_workers
        self._port = port
        self._host = host
        self._grace = grace
        self._listener = None
        self._procs = []
        self._conns = {}

    def __enter__(self):
        self._listener = socket.create_server((self._host, self._port),
                                              backlog=self._num_workers)
        self._listener.settimeout(30.0)
        ctx = multiprocessing.get_context("spawn")
        self._procs = [
            ctx.Process(target=worker_main,
                        args=(self._config, w, self._num_workers,
                              self._host, self._port),
                        daemon=True)
            for w in range(self._num_workers)
        ]
        for p in self._procs:
            p.start()
        try:
            for _ in range(self._num_workers):
                conn, _ = self._listener.accept()
                conn.settimeout(120.0)
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                hello = read_message(conn)
                if hello.msg_type != MSG_ACK:
                    raise ProtocolError(f"expected Ack, got msg_type {hello.msg_type}")
                self._conns[hello.client_id] = conn
            if sorted(self._conns) != list(range(self._num_workers)):
                raise ProtocolError(f"bad worker handshake set: {sorted(self._conns)}")
        except Exception:
            self.__exit__(None, None, None)
            raise
        return self

    def run_cohort(self, round_index: int, cohort, global_params) -> list:
        per_worker = {}
        for k in cohort:
            per_worker.setdefault(k % self._num_workers, []).append(k)
        try:
            for w in sorted(per_worker):
                for k in per_worker[w]:
                    send_message(self._conns[w],
                                 RoundMessage(MSG_BROADCAST, round_index, k,
                                              params=global_params))
            results = []
            for w in sorted(per_worker):
                for _ in per_worker[w]:
                    m = read_message(self._conns[w])
                    if m.msg_type != MSG_CLIENT_RESULT or m.round != round_index:
                        raise ProtocolError(
                            f"expected round {round_index} result, got "
                            f"msg_type {m.msg_type} round {m.round}"
                        )
                    results.append(ClientResult(m.client_id, m.params,
                                                m.num_samples, m.train_loss,
                                                m.local_steps))
        except (ProtocolError, ConnectionClosedError, OSError) as e:
            raise RoundAbortError(f"round {round_index}: worker failure: {e}") from e
        return results

    def __exit__(self, *exc):
        for conn in self._conns.values():
            try:
                send_message(conn, RoundMessage(MSG_SHUTDOWN, 0, CONTROL_CLIENT_ID))
            except OSError:
                pass
        deadline = time.monotonic() + self._grace
        for p in self._procs:
            p.join(timeout=max(0.0, deadline - time.monotonic()))
        for p in self._procs:
            if p.is_alive():
                p.terminate()
                p.join(timeout=1.0)
        for conn in self._conns.values():
            conn.close()
        if self._listener is not None:
            self._listener.close()
        self._conns.clear()
        self._procs.clear()
        return False


def resolve_port(flag_value: int | None = None) -> int:
    """Port precedence: explicit flag, then FEDSIM_PORT, then the default."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get("FEDSIM_PORT")
    if env is not None:
        return int(env)
    return DEFAULT_PORT


def make_runner(experiment, problem, port: int | None = None):
    """Carrier for an experiment: in-process for simulate, TCP for sockets."""
    if experiment.mode == "simulate":
        return InProcRunner(problem.model, experiment.client, problem.shards)
    return SocketRunner(experiment.to_dict(), experiment.workers,
                        port=resolve_port(port))
