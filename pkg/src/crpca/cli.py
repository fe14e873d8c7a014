"""Command line client.

    crpca <subcommand> --config <json> [--seed N] [--threads K] [--out DIR]

Experiments run in-process by default; ``--server URL`` posts the same config to a
running ``crpca serve`` instead. Exit codes: 0 success, 2 config error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request
from pathlib import Path

from pydantic import ValidationError

from .errors import ConfigError, NumericalError
from .schemas import KINDS, ExperimentConfig, ExperimentResult

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def load_config(text: str | None) -> dict:
    """Parse --config as inline JSON or as a path to a JSON file."""
    if text is None:
        return {}
    src = text.strip()
    if not src.startswith("{"):
        try:
            src = Path(text).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {text}: {exc}") from exc
    try:
        data = json.loads(src)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def build_config(kind: str, args: argparse.Namespace) -> ExperimentConfig:
    data = load_config(args.config)
    if data.get("kind", kind) != kind:
        raise ConfigError(f"config kind {data['kind']!r} does not match subcommand {kind!r}")
    data["kind"] = kind
    for key in ("seed", "threads", "out"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    return ExperimentConfig.model_validate(data)


def post(server: str, cfg: ExperimentConfig) -> ExperimentResult:
    req = urllib.request.Request(f"{server.rstrip('/')}/experiments/{cfg.kind}",
                                 data=cfg.model_dump_json().encode(),
                                 headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req) as resp:
            return ExperimentResult.model_validate_json(resp.read())
    except urllib.error.HTTPError as exc:
        body = exc.read().decode(errors="replace")
        if exc.code == 500:
            raise NumericalError(body) from exc
        raise ConfigError(body) from exc
    except urllib.error.URLError as exc:
        raise ConfigError(f"cannot reach {server}: {exc.reason}") from exc


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crpca", description="Compressive robust PCA experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind)
        s.add_argument("--config", help="JSON object or path to a JSON file")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out")
        s.add_argument("--server", help="post to a running service instead of running locally")
        if kind == "run":
            s.add_argument("--dump-instance", help="write the first trial's instance recipe (.npz)")
    s = sub.add_parser("serve")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return p


def main(argv: list[str] | None = None) -> int:
    args = parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("crpca.service:app", host=args.host, port=args.port)
        return EXIT_OK
    try:
        cfg = build_config(args.command, args)
        if args.server:
            result = post(args.server, cfg)
        else:
            from . import experiments

            result = experiments.run_experiment(cfg)
            if getattr(args, "dump_instance", None):
                from . import instances
                from .seeding import derive_seed

                inst = instances.make_instance(cfg.n1, cfg.n2, cfg.alpha, cfg.rho, cfg.gamma,
                                               cfg.sigma_n_sq, derive_seed(cfg.seed, 0, 0),
                                               cfg.operator)
                instances.dump_instance(inst, args.dump_instance)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(result.model_dump_json(indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
