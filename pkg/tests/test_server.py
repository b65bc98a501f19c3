"""Live listeners: TCP framing, WebSocket transport, and token isolation."""

import json
import time
import zlib
from types import SimpleNamespace

import pytest

from fhirgate.fhir import parse_bundle
from fhirgate.gateway import framing
from fhirgate.gateway.server import GatewayServer
from fhirgate.gateway.service import GatewayService, sync_from_upstream
from fhirgate.pipeline import PipelineOrchestrator, register_spine_pipeline
from fhirgate.upstream import AuthConfig, LocalBlobStore, TokenCache

from mock_upstream import MockUpstream
from test_pipeline import stacked_spine_volume, store_volume
from wire_clients import TcpFrameClient, WsFrameClient


@pytest.fixture
def env(bundle_bytes, tmp_path):
    store = LocalBlobStore(tmp_path / "blobs")
    store_volume(store, "volumes/spine-ct", stacked_spine_volume())
    orch = PipelineOrchestrator(store, job_timeout_s=60.0)
    register_spine_pipeline(orch)
    tapped = []
    service = GatewayService(parse_bundle(bundle_bytes), orch,
                             frame_tap=lambda session, data: tapped.append(data))
    server = GatewayServer(service, tcp_port=0, ws_port=0)
    server.start()
    yield SimpleNamespace(server=server, service=service, store=store,
                          orch=orch, tapped=tapped)
    server.stop()
    orch.shutdown()


def drain_mesh_streams(client, expect_meshes):
    """Read frames until expect_meshes MeshEnd frames arrive; return them all."""
    frames = []
    ends = 0
    while ends < expect_meshes:
        frame = client.recv_frame()
        assert frame is not None, "connection closed mid-stream"
        frames.append(frame)
        if frame.msg_type == framing.MESH_END:
            ends += 1
    return frames


class TestTcpTransport:
    def test_hello_then_list_patients(self, env):
        client = TcpFrameClient(env.server.tcp_port)
        ack = client.hello()
        assert ack.msg_type == framing.HELLO_ACK
        reply = client.request(framing.LIST_PATIENTS)
        assert reply.msg_type == framing.PATIENT_LIST
        names = [p["name"] for p in json.loads(reply.payload)["patients"]]
        assert names == ["Ada Lovelace", "(unnamed)"]
        client.close()

    def test_requests_split_across_tcp_segments(self, env):
        client = TcpFrameClient(env.server.tcp_port)
        client.hello()
        from fhirgate.canonical import canonical_json
        from fhirgate.gateway.framing import encode_frame
        raw = encode_frame(framing.GET_TIMELINE,
                           canonical_json({"patient": "Patient/p1"}))
        for i in range(0, len(raw), 7):
            client.send_raw(raw[i:i + 7])
            time.sleep(0.001)
        reply = client.recv_frame()
        assert reply.msg_type == framing.TIMELINE_LAYOUT
        doc = json.loads(reply.payload)
        assert len(doc["encounters"]) == 4
        client.close()

    def test_malformed_frame_closes_only_offender(self, env):
        healthy_a = TcpFrameClient(env.server.tcp_port)
        offender = TcpFrameClient(env.server.tcp_port)
        healthy_b = TcpFrameClient(env.server.tcp_port)
        for client in (healthy_a, offender, healthy_b):
            assert client.hello().msg_type == framing.HELLO_ACK

        offender.send_raw(b"THIS IS NOT A FRAME AT ALL")
        assert offender.recv_frame() is None

        for client in (healthy_a, healthy_b):
            reply = client.request(framing.LIST_PATIENTS)
            assert reply is not None and reply.msg_type == framing.PATIENT_LIST
            client.close()

    def test_oversize_declaration_closes_session(self, env):
        client = TcpFrameClient(env.server.tcp_port)
        client.hello()
        header = b"EXR1" + bytes([0x10]) + (80 * 1024 * 1024).to_bytes(4, "little")
        client.send_raw(header)
        assert client.recv_frame() is None

    def test_request_error_keeps_session_alive(self, env):
        client = TcpFrameClient(env.server.tcp_port)
        client.hello()
        reply = client.request(framing.GET_TIMELINE, {"patient": "Patient/ghost"})
        assert reply.msg_type == framing.ERROR
        assert json.loads(reply.payload)["code"] == "NotFound"
        reply = client.request(framing.LIST_PATIENTS)
        assert reply.msg_type == framing.PATIENT_LIST
        client.close()

    def test_imaging_over_tcp_streams_verified_meshes(self, env):
        client = TcpFrameClient(env.server.tcp_port)
        client.hello()
        client.send_frame(framing.GET_IMAGING, {"study_ref": "ImagingStudy/img1"})
        frames = [client.recv_frame()]
        assert frames[0].msg_type == framing.JOB_ACCEPTED
        frames += drain_mesh_streams(client, expect_meshes=3)
        blobs = {}
        label, blob = None, b""
        for frame in frames:
            if frame.msg_type == framing.MESH_BEGIN:
                label, blob = json.loads(frame.payload)["label"], b""
            elif frame.msg_type == framing.MESH_CHUNK:
                blob += frame.payload
            elif frame.msg_type == framing.MESH_END:
                end = json.loads(frame.payload)
                assert zlib.crc32(blob) == end["checksum"]
                blobs[label] = blob
        assert sorted(blobs) == [1, 2, 3]
        job_id = json.loads(frames[0].payload)["job_id"]
        for label, blob in blobs.items():
            assert blob == env.store.get(f"jobs/{job_id}/mesh_{label}.exrm")
        client.close()


class TestWebSocketTransport:
    def test_hello_and_timeline_match_tcp(self, env):
        ws = WsFrameClient(env.server.ws_port)
        assert ws.hello().msg_type == framing.HELLO_ACK
        ws_reply = ws.request(framing.GET_TIMELINE, {"patient": "Patient/p1"})

        tcp = TcpFrameClient(env.server.tcp_port)
        tcp.hello()
        tcp_reply = tcp.request(framing.GET_TIMELINE, {"patient": "Patient/p1"})

        assert ws_reply.payload == tcp_reply.payload
        ws.close()
        tcp.close()

    def test_wrong_path_is_refused(self, env):
        ws = WsFrameClient(env.server.ws_port, path="/nope")
        assert ws.recv_message() is None
        ws.close()

    def test_malformed_ws_frame_closes_only_offender(self, env):
        offender = WsFrameClient(env.server.ws_port)
        healthy = WsFrameClient(env.server.ws_port)
        assert offender.hello().msg_type == framing.HELLO_ACK
        assert healthy.hello().msg_type == framing.HELLO_ACK
        offender.send_message(b"junk that is not a frame")
        assert offender.recv_frame() is None
        reply = healthy.request(framing.LIST_PATIENTS)
        assert reply is not None and reply.msg_type == framing.PATIENT_LIST
        healthy.close()
        offender.close()

    def test_imaging_over_websocket(self, env):
        ws = WsFrameClient(env.server.ws_port)
        ws.hello()
        ws.send_frame(framing.GET_IMAGING, {"study_ref": "ImagingStudy/img1"})
        accepted = ws.recv_frame()
        assert accepted.msg_type == framing.JOB_ACCEPTED
        frames = drain_mesh_streams(ws, expect_meshes=3)
        labels = sorted(json.loads(f.payload)["label"] for f in frames
                        if f.msg_type == framing.MESH_BEGIN)
        assert labels == [1, 2, 3]
        ws.close()


class TestTokenIsolation:
    def seeded_upstream(self, bundle_doc):
        by_type = {}
        for entry in bundle_doc["entry"]:
            rtype = entry["resource"]["resourceType"]
            by_type.setdefault(rtype, []).append(entry)
        return MockUpstream(resources_by_type=by_type, page_size=2)

    def test_no_token_ever_reaches_a_client(self, env, bundle_doc):
        with self.seeded_upstream(bundle_doc) as upstream:
            cfg = AuthConfig(token_endpoint=upstream.token_endpoint,
                             client_id="gw", client_secret="s3cret")
            cache = TokenCache()
            counts = sync_from_upstream(env.service, upstream.fhir_base, cfg, cache)
            assert counts["Patient"] == 2
            assert upstream.issued_tokens

            tcp = TcpFrameClient(env.server.tcp_port)
            tcp.hello()
            tcp.request(framing.LIST_PATIENTS)
            tcp.request(framing.FIND_PATIENT, {"query": "lovelace"})
            tcp.request(framing.GET_TIMELINE, {"patient": "Patient/p1"})
            tcp.request(framing.GET_EVENT_DETAIL, {"ref": "DiagnosticReport/rep1"})
            tcp.send_frame(framing.GET_IMAGING, {"study_ref": "ImagingStudy/img1"})
            accepted = tcp.recv_frame()
            assert accepted.msg_type == framing.JOB_ACCEPTED
            drain_mesh_streams(tcp, expect_meshes=3)
            tcp.close()

            assert env.tapped, "frame tap saw no outbound frames"
            client_bytes = b"".join(tcp.received)
            for token in upstream.issued_tokens:
                needle = token.encode()
                for frame_bytes in env.tapped:
                    assert needle not in frame_bytes
                assert needle not in client_bytes
