"""Binary frame codec shared by the TCP and WebSocket transports.

Layout: 4-byte magic ``EXR1``, u8 message type, u32 little-endian payload
length, then the payload. Types 0x01-0x7F carry UTF-8 JSON, 0x80-0xFF raw
bytes.
"""

import json
import struct
from dataclasses import dataclass
from typing import Any

from fhirgate.canonical import canonical_json
from fhirgate.errors import BadMagic, Oversize, Truncated, UnknownType

MAGIC = b"EXR1"
HEADER_LEN = 9
MAX_PAYLOAD = 64 * 1024 * 1024
_HEADER = struct.Struct("<4sBI")

HELLO = 0x01
HELLO_ACK = 0x02
REJECTED = 0x03
LIST_PATIENTS = 0x10
PATIENT_LIST = 0x11
FIND_PATIENT = 0x12
PATIENT_SUMMARY = 0x13
GET_TIMELINE = 0x14
TIMELINE_LAYOUT = 0x15
GET_CLUSTER_LAYOUT = 0x16
CLUSTER_LAYOUT = 0x17
GET_EVENT_DETAIL = 0x18
EVENT_DETAIL = 0x19
LIST_PIPELINES = 0x20
PIPELINE_LIST = 0x21
GET_IMAGING = 0x22
JOB_ACCEPTED = 0x23
JOB_STATUS = 0x24
MESH_BEGIN = 0x25
MESH_END = 0x26
ERROR = 0x7F
MESH_CHUNK = 0x80

KNOWN_TYPES = frozenset({
    HELLO, HELLO_ACK, REJECTED,
    LIST_PATIENTS, PATIENT_LIST, FIND_PATIENT, PATIENT_SUMMARY,
    GET_TIMELINE, TIMELINE_LAYOUT, GET_CLUSTER_LAYOUT, CLUSTER_LAYOUT,
    GET_EVENT_DETAIL, EVENT_DETAIL, LIST_PIPELINES, PIPELINE_LIST,
    GET_IMAGING, JOB_ACCEPTED, JOB_STATUS, MESH_BEGIN, MESH_END,
    ERROR, MESH_CHUNK,
})

TYPE_NAMES = {
    HELLO: "Hello", HELLO_ACK: "HelloAck", REJECTED: "Rejected",
    LIST_PATIENTS: "ListPatients", PATIENT_LIST: "PatientList",
    FIND_PATIENT: "FindPatient", PATIENT_SUMMARY: "PatientSummary",
    GET_TIMELINE: "GetTimeline", TIMELINE_LAYOUT: "TimelineLayout",
    GET_CLUSTER_LAYOUT: "GetClusterLayout", CLUSTER_LAYOUT: "ClusterLayout",
    GET_EVENT_DETAIL: "GetEventDetail", EVENT_DETAIL: "EventDetail",
    LIST_PIPELINES: "ListPipelines", PIPELINE_LIST: "PipelineList",
    GET_IMAGING: "GetImaging", JOB_ACCEPTED: "JobAccepted",
    JOB_STATUS: "JobStatus", MESH_BEGIN: "MeshBegin", MESH_END: "MeshEnd",
    ERROR: "Error", MESH_CHUNK: "MeshChunk",
}


@dataclass(frozen=True)
class Frame:
    msg_type: int
    payload: bytes

    @property
    def is_json(self) -> bool:
        return self.msg_type < 0x80

    def json(self) -> Any:
        return json.loads(self.payload.decode("utf-8"))


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    if msg_type not in KNOWN_TYPES:
        raise UnknownType(f"message type 0x{msg_type:02X}")
    if len(payload) > MAX_PAYLOAD:
        raise Oversize(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return _HEADER.pack(MAGIC, msg_type, len(payload)) + payload


def encode_json(msg_type: int, doc: Any) -> bytes:
    return encode_frame(msg_type, canonical_json(doc))


def decode_frame(buf: bytes) -> tuple[Frame, bytes]:
    """Decode one frame from the front of ``buf``.

    Returns the frame and whatever bytes follow it. Raises Truncated when
    the buffer holds the start of a valid frame but not all of it.
    """
    head = min(len(buf), len(MAGIC))
    if buf[:head] != MAGIC[:head]:
        raise BadMagic(f"expected {MAGIC!r}")
    if len(buf) < HEADER_LEN:
        raise Truncated(f"have {len(buf)} bytes, header needs {HEADER_LEN}")
    _, msg_type, payload_len = _HEADER.unpack_from(buf)
    if msg_type not in KNOWN_TYPES:
        raise UnknownType(f"message type 0x{msg_type:02X}")
    if payload_len > MAX_PAYLOAD:
        raise Oversize(f"declared {payload_len} bytes exceeds {MAX_PAYLOAD}")
    end = HEADER_LEN + payload_len
    if len(buf) < end:
        raise Truncated(f"have {len(buf)} bytes, frame needs {end}")
    return Frame(msg_type, bytes(buf[HEADER_LEN:end])), bytes(buf[end:])
