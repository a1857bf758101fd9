"""Thin-client CLI: builds an ExperimentConfig, posts it to the service,
and writes the returned record and artifacts to the output directory.

With no --server the request goes over an in-process ASGI transport, so
`blflab <command>` works without a running daemon and stays byte-for-byte
reproducible.  Point --server at a deployed instance to run remotely.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from pathlib import Path

import httpx

from .experiments import load_preset
from .schemas import ExperimentConfig

COMMANDS = ("theorems", "train", "evaluate", "sweep", "surface", "opnorms")


def _parse_override(raw: str) -> tuple[list[str], object]:
    if "=" not in raw:
        raise SystemExit(f"override {raw!r} is not of the form key=value")
    key, value = raw.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.split("."), parsed


def _apply_override(tree: dict, path: list[str], value) -> None:
    node = tree
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise SystemExit(f"cannot override through non-object key {part!r}")
    node[path[-1]] = value


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    raw: dict = {}
    if args.config:
        if args.config.startswith("preset:"):
            raw = load_preset(args.config.removeprefix("preset:"))
        else:
            raw = json.loads(Path(args.config).read_text())
    raw["command"] = args.command
    if args.seed is not None:
        raw["seed"] = args.seed
    for item in args.override or []:
        path, value = _parse_override(item)
        _apply_override(raw, path, value)
    config = ExperimentConfig.model_validate(raw)
    if config.checkpoint_path and not config.checkpoint_b64:
        blob = Path(config.checkpoint_path).read_bytes()
        config = config.model_copy(
            update={"checkpoint_b64": base64.b64encode(blob).decode(), "checkpoint_path": None}
        )
    return config


def post_run(config: ExperimentConfig, server: str | None) -> httpx.Response:
    body = config.model_dump(mode="json")
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(f"/v1/{config.command}", json=body)
    # No server given: talk to the app over an in-process sync-ASGI bridge.
    # starlette deprecates the httpx backend for its client, but httpx2 is
    # not an installable dependency yet, so silence that one warning.
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    with TestClient(app, base_url="http://blflab") as client:
        return client.post(f"/v1/{config.command}", json=body)


def write_outputs(payload: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = payload["record"]
    (out_dir / "record.json").write_text(json.dumps(record, indent=2) + "\n")
    for name, blob in payload.get("artifacts", {}).items():
        (out_dir / name).write_bytes(base64.b64decode(blob))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="blflab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} experiment")
        cmd.add_argument("--config", help="config JSON path, or preset:<name>")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--out", default="out", help="output directory (default: ./out)")
        cmd.add_argument("--override", action="append", metavar="KEY=VALUE",
                         help="dotted-path config override, repeatable")
        cmd.add_argument("--server", default=None, help="remote service URL (default: in-process)")
    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8421)

    args = parser.parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    try:
        config = build_config(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    response = post_run(config, args.server)
    if response.status_code != 200:
        print(f"request failed ({response.status_code}): {response.text}", file=sys.stderr)
        return 2

    payload = response.json()
    write_outputs(payload, Path(args.out))
    record = payload["record"]
    status = "ok" if payload["ok"] else ("aborted" if record["aborted"] else "failed")
    print(f"{config.command}: {status}; outputs in {args.out}/")
    return 0 if payload["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
