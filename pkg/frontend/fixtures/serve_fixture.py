#!/usr/bin/env python3
"""Stand up the gateway on fixture data so external clients can drive it.

Prints "READY ws=<port> tcp=<port>" once both listeners are bound, then
serves until stdin reaches EOF, so a supervising process that holds the
pipe can end the server by closing it (and the server can never outlive
its supervisor).
"""

import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(REPO / "tests"))

from fhirgate.fhir import parse_bundle
from fhirgate.gateway.server import GatewayServer
from fhirgate.gateway.service import GatewayService
from fhirgate.pipeline import PipelineOrchestrator, register_spine_pipeline
from fhirgate.upstream import LocalBlobStore

from test_pipeline import stacked_spine_volume, store_volume


def main() -> None:
    bundle = (REPO / "tests" / "fixtures" / "synthea_bundle.json").read_bytes()
    with tempfile.TemporaryDirectory() as tmp:
        store = LocalBlobStore(Path(tmp) / "blobs")
        store_volume(store, "volumes/spine-ct", stacked_spine_volume())
        orch = PipelineOrchestrator(store, job_timeout_s=60.0)
        register_spine_pipeline(orch)
        service = GatewayService(parse_bundle(bundle), orch)
        server = GatewayServer(service, tcp_port=0, ws_port=0)
        server.start()
        try:
            print(f"READY ws={server.ws_port} tcp={server.tcp_port}", flush=True)
            sys.stdin.read()
        finally:
            server.stop()


if __name__ == "__main__":
    main()
