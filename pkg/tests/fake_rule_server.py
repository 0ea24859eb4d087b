#!/usr/bin/env python3
"""Configurable line-protocol rule server used by the client tests.

Speaks the newline-delimited JSON protocol from scratch (no package imports)
and models one Bernoulli urn with a flat prior: g = (1 + s) / (2 + c) for s
successes in c observations, any covariate. Misbehavior flags let the tests
exercise every failure path the client is supposed to detect.
"""

import argparse
import json
import os
import socket
import sys
import time


def build_parser():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--stale-ids", action="store_true",
                   help="answer non-hello requests with the previous request's id")
    p.add_argument("--bad-value", action="store_true",
                   help="report 1.2 as the first predictive value")
    p.add_argument("--wrong-version", action="store_true",
                   help="claim protocol version 99 in the handshake")
    p.add_argument("--slow", type=int, default=0, metavar="MS",
                   help="sleep before answering any non-hello request")
    p.add_argument("--die-after", type=int, default=0, metavar="N",
                   help="exit without replying once N requests were answered")
    p.add_argument("--no-batch", action="store_true",
                   help="decline predict_batch requests")
    p.add_argument("--fail-predict", action="store_true",
                   help="report ok:false for every predict")
    p.add_argument("--max-context", type=int, default=100_000)
    p.add_argument("--sum-violation", action="store_true",
                   help="shave 0.02 off every class-0 value")
    p.add_argument("--tcp", type=int, default=0, metavar="PORT",
                   help="serve on 127.0.0.1:PORT instead of stdio")
    return p


def urn_values(ys, events, opts):
    s = sum(int(y) for y in ys)
    c = len(ys)
    g = (1.0 + s) / (2.0 + c)
    out = []
    for e in events:
        v = g if int(e) == 1 else 1.0 - g
        if opts.sum_violation and int(e) == 0:
            v -= 0.02
        out.append(v)
    if opts.bad_value and out:
        out[0] = 1.2
    return out


class Session:
    def __init__(self, opts):
        self.opts = opts
        self.answered = 0
        self.prev_id = None

    def respond(self, req):
        opts = self.opts
        op = req.get("op")
        rid = req.get("id")
        if opts.die_after and self.answered >= opts.die_after:
            os._exit(0)
        if op != "hello" and opts.slow:
            time.sleep(opts.slow / 1000.0)
        reply_id = rid
        if opts.stale_ids and op != "hello" and self.prev_id is not None:
            reply_id = self.prev_id
        self.prev_id = rid

        if op == "hello":
            body = {
                "id": reply_id,
                "ok": True,
                "version": 99 if opts.wrong_version else 1,
                "capabilities": {
                    "tasks": ["binary", "regression-cdf"],
                    "max_context": opts.max_context,
                    "ensemble_size": 1,
                    "model_id": "fake-urn",
                },
            }
        elif op == "predict":
            if opts.fail_predict:
                body = {"id": reply_id, "ok": False, "error": "backend exploded"}
            else:
                ys = req["context"]["y"]
                body = {"id": reply_id, "ok": True,
                        "values": urn_values(ys, req["events"], opts)}
        elif op == "predict_batch":
            if opts.no_batch:
                body = {"id": reply_id, "ok": False, "error": "batch not supported"}
            else:
                ys = req["context"]["y"]
                rows = [urn_values(ys[:n], req["events"], opts)
                        for n in req["prefix_lens"]]
                body = {"id": reply_id, "ok": True, "values": rows}
        else:
            body = {"id": reply_id, "ok": False, "error": f"unknown op {op!r}"}

        self.answered += 1
        return (json.dumps(body, separators=(",", ":")) + "\n").encode("utf-8")


def serve_stream(rfile, wfile, opts):
    session = Session(opts)
    for line in iter(rfile.readline, b""):
        line = line.strip()
        if not line:
            continue
        wfile.write(session.respond(json.loads(line)))
        wfile.flush()


def main():
    opts = build_parser().parse_args()
    if opts.tcp:
        srv = socket.create_server(("127.0.0.1", opts.tcp))
        while True:
            conn, _ = srv.accept()
            with conn:
                rf = conn.makefile("rb")
                wf = conn.makefile("wb")
                try:
                    serve_stream(rf, wf, opts)
                except (BrokenPipeError, ConnectionResetError):
                    pass
    else:
        serve_stream(sys.stdin.buffer, sys.stdout.buffer, opts)


if __name__ == "__main__":
    main()
