import argparse
import sys

from alod_adapter.adapter import load_config, serve_request


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="alod-detector-adapter",
        description="Answer one alod wire-protocol request with a trainer backend.",
    )
    parser.add_argument("--request", required=True, help="request directory")
    parser.add_argument("--config", default=None, help="adapter config JSON")
    args = parser.parse_args(argv)
    try:
        serve_request(args.request, load_config(args.config))
    except Exception:
        # the error status has already been written into the request dir
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
