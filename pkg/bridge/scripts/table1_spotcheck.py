#!/usr/bin/env python3
"""Coverage spot check of the served model on one synthetic setting.

Runs the predbands coverage harness with this bridge as the external rule
(probit generator, n=500, 30 replications, alpha=0.05) and checks that the
pointwise rate is at least 0.90 and the mean band width lands in
0.16 +/- 0.05. Deliberately not part of the test suite: with the real
model this is an hours-scale GPU run. Pass --backend stub to smoke-test
the plumbing in minutes.
"""

import argparse
import json
import shutil
import subprocess
import sys


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--backend", default="tabpfn", choices=("tabpfn", "stub"))
    ap.add_argument("--device", default="cpu")
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if shutil.which("predbands") is None:
        print("predbands CLI not found; install the primary package first", file=sys.stderr)
        return 1

    rule = (
        f"external:subprocess:{sys.executable} -m tabpfn_bridge "
        f"--backend {args.backend} --device {args.device} --seed {args.seed}"
    )
    cmd = [
        "predbands", "coverage", "--dgp", "probit", "--rule", rule,
        "--ns", str(args.n), "--reps", str(args.reps), "--alpha", "0.05",
        "--grid=-10:10:100", "--estimator", "vn", "--seed", str(args.seed),
        "--format", "json",
    ]
    print("+ " + " ".join(cmd), file=sys.stderr)
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        print(proc.stderr, file=sys.stderr)
        return proc.returncode

    report = json.loads(proc.stdout)
    cell = next(
        c for c in report["cells"]
        if c["n"] == args.n and c["estimator"] == "vn" and c["kind"] == "pointwise"
    )
    rate, width = cell["rate"], cell["mean_width"]
    rate_ok = rate >= 0.90
    width_ok = abs(width - 0.16) <= 0.05
    print(f"pointwise rate {rate:.4f} (>= 0.90: {rate_ok})")
    print(f"mean width {width:.4f} (within 0.16 +/- 0.05: {width_ok})")
    return 0 if rate_ok and width_ok else 1


if __name__ == "__main__":
    sys.exit(main())
