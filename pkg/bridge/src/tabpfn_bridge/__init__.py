"""TabPFN behind the line-JSON predictive-rule protocol."""

from .config import BridgeConfig
from .server import serve

__all__ = ["BridgeConfig", "serve"]
