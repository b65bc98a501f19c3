#!/usr/bin/env python3
"""Record a real gateway session over the WebSocket wire as a JSON trace.

Regenerate the committed fixture with:

    python3 frontend/fixtures/record_trace.py

The script starts the gateway (fixture bundle + demo spine volume), walks
the flow a viewer session performs, and writes every frame that crossed
the wire, in order, as hex with its direction. The viewer test suite
replays the received frames through its reducer; replays must be
deterministic, so the trace is committed rather than re-recorded per run.
"""

import json
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(REPO / "tests"))

from fhirgate.canonical import canonical_json
from fhirgate.fhir import parse_bundle
from fhirgate.gateway import framing
from fhirgate.gateway.framing import Frame, encode_frame
from fhirgate.gateway.server import GatewayServer
from fhirgate.gateway.service import GatewayService
from fhirgate.pipeline import PipelineOrchestrator, register_spine_pipeline
from fhirgate.upstream import LocalBlobStore

from test_pipeline import stacked_spine_volume, store_volume
from wire_clients import WsFrameClient

OUT = Path(__file__).with_name("session_trace.json")


def main() -> None:
    bundle = (REPO / "tests" / "fixtures" / "synthea_bundle.json").read_bytes()
    frames: list[tuple[str, Frame]] = []
    with tempfile.TemporaryDirectory() as tmp:
        store = LocalBlobStore(Path(tmp) / "blobs")
        store_volume(store, "volumes/spine-ct", stacked_spine_volume())
        orch = PipelineOrchestrator(store, job_timeout_s=60.0)
        register_spine_pipeline(orch)
        service = GatewayService(parse_bundle(bundle), orch)
        server = GatewayServer(service, tcp_port=0, ws_port=0)
        server.start()
        try:
            client = WsFrameClient(server.ws_port)

            def send(msg_type: int, doc: dict) -> None:
                frames.append(("sent", Frame(msg_type, canonical_json(doc))))
                client.send_frame(msg_type, doc)

            def recv() -> Frame:
                frame = client.recv_frame()
                assert frame is not None, "gateway closed the session"
                frames.append(("received", frame))
                return frame

            send(framing.HELLO, {"device_id": "viewer-trace-01",
                                 "client_version": "trace/1"})
            assert recv().msg_type == framing.HELLO_ACK

            send(framing.LIST_PATIENTS, {})
            assert recv().msg_type == framing.PATIENT_LIST

            send(framing.FIND_PATIENT, {"query": "lovelace"})
            assert recv().msg_type == framing.PATIENT_SUMMARY

            send(framing.GET_CLUSTER_LAYOUT, {"seed": 7})
            assert recv().msg_type == framing.CLUSTER_LAYOUT

            send(framing.GET_TIMELINE, {"patient": "Patient/p1"})
            assert recv().msg_type == framing.TIMELINE_LAYOUT

            send(framing.GET_EVENT_DETAIL, {"ref": "MedicationRequest/med1"})
            assert recv().msg_type == framing.EVENT_DETAIL

            send(framing.GET_IMAGING, {"study_ref": "ImagingStudy/img1"})
            assert recv().msg_type == framing.JOB_ACCEPTED
            mesh_ends = 0
            while mesh_ends < 3:
                if recv().msg_type == framing.MESH_END:
                    mesh_ends += 1

            client.close()
        finally:
            server.stop()
            orch.shutdown()

    doc = {
        "note": "gateway WebSocket session; one frame per entry, hex-encoded",
        "frames": [
            {"dir": direction,
             "type": frame.msg_type,
             "name": framing.TYPE_NAMES.get(frame.msg_type,
                                            f"0x{frame.msg_type:02X}"),
             "hex": encode_frame(frame.msg_type, frame.payload).hex()}
            for direction, frame in frames
        ],
    }
    OUT.write_text(json.dumps(doc, indent=1) + "\n")
    received = sum(1 for direction, _ in frames if direction == "received")
    print(f"wrote {OUT} ({len(frames)} frames, {received} received)")


if __name__ == "__main__":
    main()
