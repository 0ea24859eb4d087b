"""Server configuration and its command-line mirror."""

from __future__ import annotations

import argparse
from dataclasses import dataclass

MODEL_KINDS = ("classifier", "regressor")
BACKENDS = ("tabpfn", "stub")


class ConfigError(ValueError):
    """Invalid configuration; maps to a usage error at the CLI."""


@dataclass(frozen=True)
class BridgeConfig:
    """One server process serves one model kind over one transport.

    `ensemble` is the number of estimator members; seeds for their
    per-member perturbations are derived once from `seed` at startup and
    then held for the server's lifetime, so identical requests get
    identical answers for as long as the process lives.
    """

    model_kind: str = "classifier"
    ensemble: int = 64
    temperature: float = 1.0
    device: str = "cpu"
    seed: int = 0
    transport: str = "stdio"
    backend: str = "tabpfn"
    max_context: int = 10_000

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.ensemble < 1:
            raise ConfigError("ensemble must be >= 1")
        if not self.temperature > 0.0:
            raise ConfigError("temperature must be > 0")
        if self.max_context < 1:
            raise ConfigError("max_context must be >= 1")
        self.tcp_port  # validate transport eagerly

    @property
    def tcp_port(self) -> int | None:
        """None for stdio; the port for `tcp:<port>`."""
        if self.transport == "stdio":
            return None
        kind, sep, port = self.transport.partition(":")
        if kind != "tcp" or not sep:
            raise ConfigError(f"transport must be 'stdio' or 'tcp:<port>', got {self.transport!r}")
        try:
            port_n = int(port)
        except ValueError:
            raise ConfigError(f"malformed tcp port {port!r}") from None
        if not 0 < port_n < 65536:
            raise ConfigError(f"tcp port {port_n} out of range")
        return port_n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tabpfn-bridge",
        description="Serve a tabular predictor behind the line-JSON rule protocol "
                    "(stdio by default; stdout carries protocol lines only, logs go "
                    "to stderr).",
    )
    p.add_argument("--model-kind", choices=MODEL_KINDS, default="classifier")
    p.add_argument("--ensemble", type=int, default=64, help="estimator members (default 64)")
    p.add_argument("--temperature", type=float, default=1.0, help="softmax temperature")
    p.add_argument("--device", default="cpu")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--transport", default="stdio", help="'stdio' or 'tcp:<port>'")
    p.add_argument("--backend", choices=BACKENDS, default="tabpfn",
                   help="'stub' is a deterministic kernel smoother for tests")
    p.add_argument("--max-context", type=int, default=10_000)
    return p


def config_from_argv(argv=None) -> BridgeConfig:
    args = build_parser().parse_args(argv)
    return BridgeConfig(
        model_kind=args.model_kind,
        ensemble=args.ensemble,
        temperature=args.temperature,
        device=args.device,
        seed=args.seed,
        transport=args.transport,
        backend=args.backend,
        max_context=args.max_context,
    )
