"""Line-JSON protocol loop over stdio or TCP.

One request line in, exactly one response line out, in order; responses
echo the request id. All failures after startup are reported in-band as
{"id": ..., "ok": false, "error": ...} so a misbehaving request never
kills the server. In stdio mode stdout is protocol-pure; everything
human-readable goes to stderr. TCP connections each get a thread and
share the model behind a lock, since inference is the bottleneck anyway.
"""

from __future__ import annotations

import json
import socket
import sys
import threading

import numpy as np

from .backends import BackendError, make_backend
from .config import BridgeConfig

PROTOCOL_VERSION = 1

_TASKS_BY_KIND = {
    "classifier": ("binary", "multiclass"),
    "regressor": ("regression_cdf",),
}


class RequestError(ValueError):
    """Invalid request content; the message goes back in-band."""


def _log(msg: str):
    print(f"tabpfn-bridge: {msg}", file=sys.stderr, flush=True)


def _as_matrix(raw, name: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise RequestError(f"{name} must be a nonempty list of feature rows")
    if not np.all(np.isfinite(arr)):
        raise RequestError(f"{name} contains non-finite values")
    return arr


class Session:
    """Protocol state shared by every connection of one server process."""

    def __init__(self, cfg: BridgeConfig):
        self.cfg = cfg
        self.backend = make_backend(cfg)
        self.tasks = _TASKS_BY_KIND[cfg.model_kind]
        self._lock = threading.Lock()

    # -- request handling ---------------------------------------------------

    def handle_line(self, line: bytes) -> bytes:
        rid = None
        try:
            req = json.loads(line.decode("utf-8"))
            if not isinstance(req, dict):
                raise RequestError("request must be a JSON object")
            rid = req.get("id")
            body = self._dispatch(req)
        except (RequestError, BackendError) as exc:
            body = {"id": rid, "ok": False, "error": str(exc)}
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            body = {"id": rid, "ok": False, "error": f"malformed request line: {exc}"}
        except Exception as exc:  # last resort: keep serving
            _log(f"internal error: {type(exc).__name__}: {exc}")
            body = {"id": rid, "ok": False, "error": f"internal error: {exc}"}
        return json.dumps(body, separators=(",", ":")).encode("utf-8") + b"\n"

    def _dispatch(self, req: dict) -> dict:
        op = req.get("op")
        rid = req.get("id")
        if op == "hello":
            return self._hello(req)
        if op == "predict":
            values = self._predict_rows(req, [None])[0]
            return {"id": rid, "ok": True, "values": values}
        if op == "predict_batch":
            lens = req.get("prefix_lens")
            if not isinstance(lens, list) or not lens:
                raise RequestError("predict_batch needs a nonempty prefix_lens list")
            rows = self._predict_rows(req, [int(n) for n in lens])
            return {"id": rid, "ok": True, "values": rows}
        raise RequestError(f"unknown op {op!r}")

    def _hello(self, req: dict) -> dict:
        version = req.get("version")
        if version != PROTOCOL_VERSION:
            raise RequestError(
                f"unsupported protocol version {version!r}; this server speaks {PROTOCOL_VERSION}"
            )
        return {
            "id": req.get("id"),
            "ok": True,
            "version": PROTOCOL_VERSION,
            "capabilities": {
                "tasks": list(self.tasks),
                "max_context": self.cfg.max_context,
                "ensemble_size": self.cfg.ensemble,
                "model_id": self.backend.model_id,
            },
        }

    # -- prediction ---------------------------------------------------------

    def _predict_rows(self, req: dict, prefix_lens: list) -> list:
        task = str(req.get("task", "")).replace("-", "_")
        if task not in self.tasks:
            raise RequestError(
                f"task {task!r} not served by this {self.cfg.model_kind} (serves {self.tasks})"
            )
        ctx = req.get("context")
        if not isinstance(ctx, dict) or "x" not in ctx or "y" not in ctx:
            raise RequestError("context must carry x and y")
        xs = _as_matrix(ctx["x"], "context.x")
        ys = np.asarray(ctx["y"], dtype=np.float64)
        if ys.ndim != 1 or ys.shape[0] != xs.shape[0]:
            raise RequestError("context.y must have one label per context row")
        if xs.shape[0] > self.cfg.max_context:
            raise RequestError(
                f"context length {xs.shape[0]} exceeds max_context {self.cfg.max_context}"
            )
        queries = _as_matrix(req.get("queries"), "queries")
        if queries.shape[1] != xs.shape[1]:
            raise RequestError("queries and context disagree on feature count")
        events = req.get("events")
        if not isinstance(events, list) or len(events) != queries.shape[0]:
            raise RequestError("events must list one event per query")

        classify = task != "regression_cdf"
        if classify:
            k = int(req.get("k", 0))
            if k < 2:
                raise RequestError(f"classification needs k >= 2 classes, got {k}")
            if np.any(ys != np.round(ys)) or ys.min() < 0 or ys.max() >= k:
                raise RequestError(f"context labels must be integers in [0, {k})")
            events_i = [int(e) for e in events]
            if any(not 0 <= e < k for e in events_i):
                raise RequestError(f"event classes must lie in [0, {k})")

        rows = []
        for n in prefix_lens:
            px, py = (xs, ys) if n is None else (xs[:n], ys[:n])
            if not 1 <= px.shape[0] <= xs.shape[0]:
                raise RequestError(f"prefix length {n} outside [1, {xs.shape[0]}]")
            with self._lock:
                if classify:
                    if np.unique(py).size < 2:
                        raise RequestError(
                            f"context prefix of length {px.shape[0]} contains a single "
                            "class; cannot condition the model"
                        )
                    probs = self.backend.class_probs(px, py, k, queries)
                    vals = probs[np.arange(queries.shape[0]), events_i]
                else:
                    vals = self.backend.cdf_at(px, py, queries, np.asarray(events, dtype=np.float64))
            rows.append([float(v) for v in np.clip(vals, 0.0, 1.0)])
        return rows


# -- transports -------------------------------------------------------------

def _serve_stream(session: Session, rfile, wfile):
    for line in iter(rfile.readline, b""):
        if not line.strip():
            continue
        wfile.write(session.handle_line(line))
        wfile.flush()


def _serve_tcp(session: Session, port: int):
    srv = socket.create_server(("127.0.0.1", port))
    _log(f"listening on 127.0.0.1:{srv.getsockname()[1]}")

    def one(conn):
        with conn:
            try:
                _serve_stream(session, conn.makefile("rb"), conn.makefile("wb"))
            except (BrokenPipeError, ConnectionResetError):
                pass

    while True:
        conn, _ = srv.accept()
        threading.Thread(target=one, args=(conn,), daemon=True).start()


def serve(cfg: BridgeConfig):
    """Answer requests until stdin closes (stdio) or forever (tcp).

    Backend construction happens first; a model that cannot load must fail
    here, before any client speaks to us.
    """
    session = Session(cfg)
    _log(
        f"serving {session.backend.model_id} on {cfg.transport} "
        f"(ensemble={cfg.ensemble}, seed={cfg.seed})"
    )
    port = cfg.tcp_port
    if port is None:
        _serve_stream(session, sys.stdin.buffer, sys.stdout.buffer)
    else:
        _serve_tcp(session, port)
