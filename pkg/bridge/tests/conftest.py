"""Shared driver: a bridge subprocess spoken to over its stdio transport."""

import json
import queue
import subprocess
import sys
import threading

import pytest


class BridgeProc:
    """One server process; send one request dict, get one response dict.

    Responses are pumped through a reader thread so a hung or dead server
    fails the test with a timeout instead of wedging the run.
    """

    def __init__(self, *flags):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "tabpfn_bridge", "--backend", "stub", *flags],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
        )
        self._lines = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._next_id = 1

    def _pump(self):
        for line in iter(self.proc.stdout.readline, b""):
            self._lines.put(line)

    def send_raw(self, data: bytes):
        self.proc.stdin.write(data)
        self.proc.stdin.flush()

    def read_line(self, timeout=10.0) -> bytes:
        try:
            return self._lines.get(timeout=timeout)
        except queue.Empty:
            raise AssertionError("no response line within timeout") from None

    def roundtrip(self, body: dict, rid=None) -> dict:
        if rid is None:
            rid = self._next_id
            self._next_id += 1
        payload = {"id": rid}
        payload.update(body)
        self.send_raw(json.dumps(payload).encode() + b"\n")
        resp = json.loads(self.read_line().decode())
        assert resp["id"] == rid, f"response {resp} does not echo id {rid}"
        return resp

    def hello(self) -> dict:
        resp = self.roundtrip({"op": "hello", "version": 1})
        assert resp["ok"], resp
        return resp

    def close(self):
        self.proc.stdin.close()
        self.proc.wait(timeout=10)
        self.proc.stdout.close()
        self.proc.stderr.close()


@pytest.fixture
def bridge():
    procs = []

    def spawn(*flags) -> BridgeProc:
        p = BridgeProc(*flags)
        procs.append(p)
        return p

    yield spawn
    for p in procs:
        try:
            p.close()
        except Exception:
            p.proc.kill()


def binary_context(n=12):
    xs = [[float(i) / 3.0] for i in range(n)]
    ys = [i % 2 for i in range(n)]
    return {"x": xs, "y": ys}


def predict_req(ctx, queries, events, task="binary", k=2, op="predict"):
    return {"op": op, "task": task, "k": k, "context": ctx,
            "queries": queries, "events": events}
