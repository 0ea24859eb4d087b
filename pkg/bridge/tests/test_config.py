"""Configuration defaults, validation, and the flag mirror."""

import pytest

from tabpfn_bridge.config import BridgeConfig, ConfigError, config_from_argv


def test_defaults():
    cfg = BridgeConfig()
    assert cfg.model_kind == "classifier"
    assert cfg.ensemble == 64
    assert cfg.temperature == 1.0
    assert cfg.backend == "tabpfn"
    assert cfg.transport == "stdio"
    assert cfg.tcp_port is None


@pytest.mark.parametrize("bad", [
    dict(ensemble=0),
    dict(ensemble=-3),
    dict(temperature=0.0),
    dict(temperature=-1.0),
    dict(model_kind="oracle"),
    dict(backend="mock"),
    dict(max_context=0),
    dict(transport="udp:9"),
    dict(transport="tcp:"),
    dict(transport="tcp:abc"),
    dict(transport="tcp:0"),
    dict(transport="tcp:70000"),
])
def test_rejects_invalid(bad):
    with pytest.raises(ConfigError):
        BridgeConfig(**bad)


def test_tcp_port_parses():
    assert BridgeConfig(transport="tcp:7001").tcp_port == 7001


def test_argv_mirror():
    cfg = config_from_argv([
        "--model-kind", "regressor", "--ensemble", "8", "--temperature", "2.0",
        "--seed", "9", "--transport", "tcp:7500", "--backend", "stub",
        "--max-context", "500", "--device", "cuda",
    ])
    assert cfg == BridgeConfig(
        model_kind="regressor", ensemble=8, temperature=2.0, seed=9,
        transport="tcp:7500", backend="stub", max_context=500, device="cuda",
    )


def test_argv_defaults_match_config_defaults():
    assert config_from_argv([]) == BridgeConfig()
