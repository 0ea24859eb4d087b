"""Entry point: parse flags, load the model, serve until terminated."""

import sys

from .backends import BackendError
from .config import ConfigError, config_from_argv
from .server import serve


def main(argv=None) -> int:
    try:
        cfg = config_from_argv(argv)
    except ConfigError as exc:
        print(f"tabpfn-bridge: {exc}", file=sys.stderr)
        return 2
    try:
        serve(cfg)
    except BackendError as exc:
        # model-load failures must be loud and fatal, not in-band
        print(f"tabpfn-bridge: startup failed: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
