"""Process entry points for the multi-process fidelity level.

Each worker prints ``READY <port>`` on stdout once it is serving, then runs
until terminated. A worker config is passed as inline JSON or a file path
via --config-json.

    python -m props.workers source         --config-json '{...}'
    python -m props.workers attestor       --config-json '{...}'
    python -m props.workers committee-node --config-json '{...}'
    python -m props.workers exec-batch < jobs.json > outputs.json
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
import threading
import time

from . import wire
from .attestor import AttestorProxy
from .core import DataRecord, SecretKey
from .source import RecordServer, RecordStore, SourceDescriptor

READY_PREFIX = "READY"


def _load_config(arg: str) -> dict:
    if arg.lstrip().startswith("{"):
        return json.loads(arg)
    with open(arg, "rb") as fh:
        return json.load(fh)


def _announce(port: int) -> None:
    print(f"{READY_PREFIX} {port}", flush=True)


def _sleep_forever() -> None:
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass


def _run_source(config: dict) -> None:
    secret = SecretKey.from_doc(config["secret"])
    store = RecordStore.from_doc(config["store"])
    descriptor = SourceDescriptor(
        source_id=config["source_id"],
        host=config.get("host", "127.0.0.1"),
        port=config.get("port", 0),
        source_identity=secret.identity,
        signing_enabled=bool(config.get("signing_enabled", False)),
    )
    server = RecordServer(descriptor, store, secret).start()
    _announce(server.endpoint[1])
    _sleep_forever()


def _run_attestor(config: dict) -> None:
    secret = SecretKey.from_doc(config["secret"])
    sources = {sid: (ep[0], ep[1]) for sid, ep in config["sources"].items()}
    offset = int(config.get("clock_offset", 0))
    clock = time.time if offset == 0 else (lambda: time.time() + offset)
    proxy = AttestorProxy(
        secret, sources, host=config.get("host", "127.0.0.1"), port=config.get("port", 0), clock=clock
    ).start()
    _announce(proxy.endpoint[1])
    _sleep_forever()


def _run_committee_node(config: dict) -> None:
    from .committee import LocalNode
    from .pinned import ModelSpec, ModelWeights

    secret = SecretKey.from_doc(config["secret"])
    node = LocalNode(secret, config.get("behavior", "honest"), index=int(config.get("index", 0)))

    def answer(request: dict) -> dict:
        if not isinstance(request, dict) or request.get("op") != "vote":
            return wire.error_doc(wire.ERR_MALFORMED, "expected a vote frame")
        spec = ModelSpec.from_doc(request["spec"])
        weights = ModelWeights.from_doc(request["weights"])
        record = DataRecord.from_doc(request["record"])
        vote = node.cast_vote(spec, weights, record, request["executed_at"])
        if vote is None:
            return {"op": "vote_result", "vote": None}
        return {
            "op": "vote_result",
            "vote": {
                "identity": vote.identity.to_doc(),
                "output": vote.output.to_doc(),
                "signature": vote.signature.hex(),
            },
        }

    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind((config.get("host", "127.0.0.1"), config.get("port", 0)))
    listener.listen(16)
    _announce(listener.getsockname()[1])

    def serve(conn: socket.socket) -> None:
        with conn:
            conn.settimeout(10.0)
            try:
                request = wire.recv_doc(conn)
                wire.send_doc(conn, answer(request))
            except Exception:
                pass

    while True:
        try:
            conn, _ = listener.accept()
        except OSError:
            return
        threading.Thread(target=serve, args=(conn,), daemon=True).start()


def _run_exec_batch() -> None:
    from .pinned import EnvDescriptor, ModelWeights, execute_pinned, pin_model

    jobs = json.load(sys.stdin)
    outputs = []
    for job in jobs["jobs"]:
        env = EnvDescriptor.from_doc(job["env"])
        weights = ModelWeights.from_doc(job["weights"])
        spec = pin_model(env, weights)
        record = DataRecord.from_doc(job["record"])
        outputs.append(execute_pinned(spec, weights, record).to_doc())
    json.dump({"outputs": outputs}, sys.stdout)
    sys.stdout.write("\n")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="props.workers", description=__doc__)
    parser.add_argument("kind", choices=["source", "attestor", "committee-node", "exec-batch"])
    parser.add_argument("--config-json", default="{}", help="inline JSON or a path to a JSON file")
    args = parser.parse_args(argv)
    if args.kind == "exec-batch":
        _run_exec_batch()
        return 0
    config = _load_config(args.config_json)
    if args.kind == "source":
        _run_source(config)
    elif args.kind == "attestor":
        _run_attestor(config)
    else:
        _run_committee_node(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
