"""Protocol client that makes an external process behave as a predictive rule.

Wire format is newline-delimited JSON over a subprocess's stdio or a TCP
socket, one object per line, UTF-8. Requests carry a per-connection id; the
matching response must echo it, so shuffled or dropped replies are detected
rather than silently misattributed. Serialization uses Python's shortest
round-trip float repr, which keeps replay logs bit-stable.

    -> {"id":1,"op":"hello","version":1}
    <- {"id":1,"ok":true,"version":1,"capabilities":{"tasks":["binary"],...}}
    -> {"id":2,"op":"predict","task":"binary","k":2,
        "context":{"x":[[0.5]],"y":[1]},"queries":[[0.0]],"events":[1]}
    <- {"id":2,"ok":true,"values":[0.625]}

Servers may additionally implement "predict_batch" (one shared context, many
prefix lengths); the client probes for it and falls back to per-prefix
"predict" calls when the server declines.
"""

from __future__ import annotations

import json
import math
import os
import selectors
import shlex
import socket
import subprocess
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .data import ContextTable, PredictiveVector, QuerySpec, TaskKind
from .errors import DataError, ProtocolError, RuleError, UsageError
from .rules import PredictiveRule, degenerate_fallback

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_MS = 30_000
TIMEOUT_ENV = "PREDBANDS_RULE_TIMEOUT_MS"

_LOG_LOCK = threading.Lock()


class _TransportError(Exception):
    """Internal: connection-level failure, eligible for the single retry."""


@dataclass(frozen=True)
class Endpoint:
    """Where the rule server lives and how hard to lean on it."""

    transport: str  # "subprocess" | "tcp"
    argv: tuple = ()
    host: str = ""
    port: int = 0
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_in_flight: int = 1
    replay_log: str | None = None

    def __post_init__(self):
        if self.transport not in ("subprocess", "tcp"):
            raise UsageError(f"unknown transport {self.transport!r}")
        if self.transport == "subprocess" and not self.argv:
            raise UsageError("subprocess endpoint needs a command")
        if self.transport == "tcp" and (not self.host or not 0 < self.port < 65536):
            raise UsageError("tcp endpoint needs host and port")
        if self.timeout_ms <= 0:
            raise UsageError("timeout must be > 0")
        if self.max_in_flight < 1:
            raise UsageError("max_in_flight must be >= 1")
        object.__setattr__(self, "argv", tuple(self.argv))

    @classmethod
    def parse(cls, text: str, **kwargs) -> "Endpoint":
        """`subprocess:<command line>` or `tcp:<host>:<port>`."""
        kind, sep, rest = text.partition(":")
        if not sep or not rest:
            raise UsageError(f"malformed endpoint {text!r}")
        if kind == "subprocess":
            return cls(transport="subprocess", argv=tuple(shlex.split(rest)), **kwargs)
        if kind == "tcp":
            host, sep, port = rest.rpartition(":")
            if not sep or not host:
                raise UsageError(f"malformed tcp endpoint {text!r}")
            try:
                port_n = int(port)
            except ValueError:
                raise UsageError(f"malformed tcp port {port!r}") from None
            return cls(transport="tcp", host=host, port=port_n, **kwargs)
        raise UsageError(f"unknown transport {kind!r}")

    def describe(self) -> str:
        if self.transport == "subprocess":
            return "subprocess:" + " ".join(self.argv)
        return f"tcp:{self.host}:{self.port}"

    @property
    def timeout_s(self) -> float:
        raw = os.environ.get(TIMEOUT_ENV)
        ms = self.timeout_ms
        if raw is not None:
            try:
                ms = int(raw)
            except ValueError:
                raise UsageError(f"{TIMEOUT_ENV} must be an integer, got {raw!r}") from None
            if ms <= 0:
                raise UsageError(f"{TIMEOUT_ENV} must be > 0")
        return ms / 1000.0


@dataclass(frozen=True)
class Capabilities:
    tasks: tuple
    max_context: int
    ensemble_size: int
    model_id: str

    def __post_init__(self):
        if self.max_context < 1:
            raise ProtocolError("server advertised max_context < 1")
        norm = tuple(str(t).replace("-", "_") for t in self.tasks)
        object.__setattr__(self, "tasks", norm)


class _Conn:
    """One serially-ordered protocol connection with its own id counter."""

    def __init__(self, endpoint: Endpoint):
        self.endpoint = endpoint
        self._buf = b""
        self._next_id = 1
        self._proc = None
        self._sock = None
        self._sel = None
        try:
            if endpoint.transport == "subprocess":
                self._proc = subprocess.Popen(
                    list(endpoint.argv), stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE, bufsize=0,
                )
                self._sel = selectors.DefaultSelector()
                self._sel.register(self._proc.stdout, selectors.EVENT_READ)
            else:
                self._sock = socket.create_connection(
                    (endpoint.host, endpoint.port), timeout=endpoint.timeout_s
                )
        except (OSError, ValueError) as exc:
            raise RuleError(f"cannot reach rule server {endpoint.describe()}: {exc}") from exc

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self._proc is not None:
            self._sel.close()
            for pipe in (self._proc.stdin, self._proc.stdout):
                try:
                    pipe.close()
                except OSError:
                    pass
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def _send(self, line: bytes):
        try:
            if self._sock is not None:
                self._sock.sendall(line)
            else:
                self._proc.stdin.write(line)
                self._proc.stdin.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise _TransportError(f"send failed: {exc}") from exc

    def _recv_some(self, wait_s: float) -> bytes:
        if self._sock is not None:
            self._sock.settimeout(max(wait_s, 1e-3))
            try:
                return self._sock.recv(65536)
            except socket.timeout:
                return b""
            except OSError as exc:
                raise _TransportError(f"receive failed: {exc}") from exc
        if self._sel.select(max(wait_s, 1e-3)):
            chunk = os.read(self._proc.stdout.fileno(), 65536)
            if chunk == b"" and self._proc.poll() is not None:
                raise _TransportError("server process exited")
            return chunk
        if self._proc.poll() is not None:
            raise _TransportError("server process exited")
        return b""

    def _read_line(self, deadline: float) -> bytes:
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise _TransportError(
                    f"timed out after {self.endpoint.timeout_s:.3f}s waiting for reply"
                )
            chunk = self._recv_some(remaining)
            if chunk == b"":
                continue
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line

    def exchange(self, body: dict) -> dict:
        """Send one request, await the response answering its id."""
        req_id = self._next_id
        self._next_id += 1
        payload = {"id": req_id}
        payload.update(body)
        line = json.dumps(payload, separators=(",", ":")).encode("utf-8") + b"\n"
        self._send(line)
        deadline = time.monotonic() + self.endpoint.timeout_s
        resp_line = self._read_line(deadline)
        if self.endpoint.replay_log:
            with _LOG_LOCK, open(self.endpoint.replay_log, "ab") as fh:
                fh.write(line)
                fh.write(resp_line + b"\n")
        try:
            resp = json.loads(resp_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"malformed reply: {exc}") from exc
        if not isinstance(resp, dict) or "id" not in resp or "ok" not in resp:
            raise ProtocolError(f"malformed reply: {resp_line[:200]!r}")
        if resp["id"] != req_id:
            raise ProtocolError(
                f"response id {resp['id']!r} does not answer request id {req_id}"
            )
        return resp

    def hello(self) -> Capabilities:
        resp = self.exchange({"op": "hello", "version": PROTOCOL_VERSION})
        if not resp.get("ok"):
            raise ProtocolError(f"handshake rejected: {resp.get('error', 'no reason given')}")
        version = resp.get("version")
        if version != PROTOCOL_VERSION:
            raise ProtocolError(
                f"protocol version mismatch: server speaks {version!r}, client speaks {PROTOCOL_VERSION}"
            )
        caps = resp.get("capabilities")
        if not isinstance(caps, dict) or "tasks" not in caps:
            raise ProtocolError("malformed hello reply: missing capabilities.tasks")
        return Capabilities(
            tasks=tuple(caps["tasks"]),
            max_context=int(caps.get("max_context", 1_000_000)),
            ensemble_size=int(caps.get("ensemble_size", 1)),
            model_id=str(caps.get("model_id", "unknown")),
        )


def handshake(endpoint: Endpoint) -> Capabilities:
    """One-shot capability probe on a fresh connection."""
    conn = _Conn(endpoint)
    try:
        try:
            return conn.hello()
        except _TransportError as exc:
            raise RuleError(f"handshake with {endpoint.describe()} failed: {exc}") from exc
    finally:
        conn.close()


class _ConnPool:
    """Up to max_in_flight live connections, each handshaken once."""

    def __init__(self, endpoint: Endpoint):
        self.endpoint = endpoint
        self._free: list[_Conn] = []
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(endpoint.max_in_flight)
        self.capabilities: Capabilities | None = None

    def _connect(self) -> _Conn:
        conn = _Conn(self.endpoint)
        try:
            caps = conn.hello()
        except _TransportError as exc:
            conn.close()
            raise RuleError(
                f"handshake with {self.endpoint.describe()} failed: {exc}"
            ) from exc
        except Exception:
            conn.close()
            raise
        with self._lock:
            if self.capabilities is None:
                self.capabilities = caps
        return conn

    @contextmanager
    def lease(self):
        self._slots.acquire()
        try:
            with self._lock:
                conn = self._free.pop() if self._free else None
            if conn is None:
                conn = self._connect()
            try:
                yield conn
            except BaseException:
                # any failure may leave the stream desynced; drop the conn
                conn.close()
                raise
            else:
                with self._lock:
                    self._free.append(conn)
        finally:
            self._slots.release()

    def close(self):
        with self._lock:
            conns, self._free = self._free, []
        for conn in conns:
            conn.close()


class RemoteRule(PredictiveRule):
    """A rule living behind an Endpoint, with local degenerate-prefix answers.

    The server sees only prefixes containing both classes (or two distinct
    regression outcomes); shorter degenerate prefixes are answered locally by
    the empirical fallback, since a remote model has no usable prior.
    """

    stateless = True
    has_prior = False
    substitutes_degenerate = True

    def __init__(self, endpoint: Endpoint):
        self.endpoint = endpoint
        self.max_in_flight = endpoint.max_in_flight
        self.rule_id = f"external:{endpoint.describe()}"
        self._pool = _ConnPool(endpoint)
        self._batch_ok: bool | None = None  # unknown until first probe

    def close(self):
        self._pool.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def capabilities(self) -> Capabilities:
        if self._pool.capabilities is None:
            with self._pool.lease():
                pass  # first lease performs the handshake
        return self._pool.capabilities

    def supports(self, task: TaskKind) -> bool:
        return task.kind in self.capabilities().tasks

    def _exchange_with_retry(self, body: dict) -> dict:
        try:
            with self._pool.lease() as conn:
                return conn.exchange(body)
        except _TransportError as first:
            try:
                with self._pool.lease() as conn:
                    return conn.exchange(body)
            except _TransportError as second:
                raise RuleError(f"transport failure after retry: {second}") from first

    def _request_body(self, op: str, context: ContextTable, queries: QuerySpec) -> dict:
        task = context.task
        k = task.n_classes if task.is_classification else 0
        if task.is_classification:
            y = [int(v) for v in context.ys.tolist()]
            events = [int(e) for e in queries.events]
        else:
            y = [float(v) for v in context.ys.tolist()]
            events = [float(e) for e in queries.events]
        return {
            "op": op,
            "task": task.kind,
            "k": k,
            "context": {"x": context.xs.tolist(), "y": y},
            "queries": queries.xs.tolist(),
            "events": events,
        }

    def _validate_values(self, raw, queries: QuerySpec, task: TaskKind) -> np.ndarray:
        if not isinstance(raw, list) or len(raw) != queries.m:
            got = len(raw) if isinstance(raw, list) else type(raw).__name__
            raise ProtocolError(f"server returned {got} values for {queries.m} queries")
        values = np.asarray(raw, dtype=np.float64)
        for j, v in enumerate(values):
            if not math.isfinite(v) or not 0.0 <= v <= 1.0:
                raise ProtocolError(
                    f"server returned probability {v!r} at index {j} outside [0, 1]"
                )
        if task.is_classification:
            self._check_full_distributions(values, queries, task)
        return values

    @staticmethod
    def _check_full_distributions(values, queries: QuerySpec, task: TaskKind):
        # a query group covering every class must sum to ~1
        groups: dict[bytes, list[int]] = {}
        for j in range(queries.m):
            groups.setdefault(queries.xs[j].tobytes(), []).append(j)
        for idx in groups.values():
            events = {int(queries.events[j]) for j in idx}
            if len(idx) == task.n_classes and events == set(range(task.n_classes)):
                total = float(values[idx].sum())
                if abs(total - 1.0) > 1e-6:
                    raise ProtocolError(
                        f"server distribution sums to {total!r} over all {task.n_classes} classes"
                    )

    def predict(self, prefix: ContextTable, queries: QuerySpec) -> PredictiveVector:
        caps = self.capabilities()
        if prefix.n < 1:
            raise DataError("remote prediction needs a nonempty prefix")
        if prefix.n > caps.max_context:
            raise DataError(
                f"context length {prefix.n} exceeds server max_context {caps.max_context}"
            )
        resp = self._exchange_with_retry(self._request_body("predict", prefix, queries))
        if not resp.get("ok"):
            raise RuleError(f"server reported: {resp.get('error', 'unspecified failure')}")
        values = self._validate_values(resp.get("values"), queries, prefix.task)
        return PredictiveVector(values, prefix.n)

    def prefix_values(self, context: ContextTable, queries: QuerySpec) -> np.ndarray:
        """All-prefix predictive values, rows k = 0..n.

        Row 0 duplicates row 1 as a placeholder: a remote rule has no prior and
        the trajectory never evaluates k = 0 for it. Degenerate prefixes are
        answered locally; the rest go to the server, batched when it lets us.
        """
        caps = self.capabilities()
        n = context.n
        if n > caps.max_context:
            raise DataError(
                f"context length {n} exceeds server max_context {caps.max_context}"
            )
        values = np.empty((n + 1, queries.m), dtype=np.float64)
        local_ks = []
        for k in range(1, n + 1):
            sub = degenerate_fallback(context.head(k), queries, context.task)
            if sub is None:
                break
            values[k] = sub.values
            local_ks.append(k)
        remote_ks = list(range(len(local_ks) + 1, n + 1))
        if remote_ks:
            rows = self._remote_prefix_rows(context, queries, remote_ks)
            for k, row in zip(remote_ks, rows):
                values[k] = row
        values[0] = values[1] if n >= 1 else 0.0
        return values

    def _remote_prefix_rows(self, context, queries, ks):
        if self._batch_ok is not False:
            body = self._request_body("predict_batch", context, queries)
            body["prefix_lens"] = list(ks)
            resp = self._exchange_with_retry(body)
            if resp.get("ok"):
                self._batch_ok = True
                raw = resp.get("values")
                if not isinstance(raw, list) or len(raw) != len(ks):
                    got = len(raw) if isinstance(raw, list) else type(raw).__name__
                    raise ProtocolError(
                        f"server returned {got} prefix rows for {len(ks)} requested"
                    )
                return [
                    self._validate_values(row, queries, context.task) for row in raw
                ]
            self._batch_ok = False  # server declined; remember and fall back
        if self.max_in_flight > 1 and len(ks) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                return list(
                    pool.map(lambda k: self.predict(context.head(k), queries).values, ks)
                )
        return [self.predict(context.head(k), queries).values for k in ks]


def remote_predict(endpoint: Endpoint, prefix: ContextTable, queries: QuerySpec) -> PredictiveVector:
    """One-shot convenience wrapper around a pooled RemoteRule."""
    rule = RemoteRule(endpoint)
    try:
        return rule.predict(prefix, queries)
    finally:
        rule.close()
