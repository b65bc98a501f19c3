"""Client-facing wire protocol, sessions, and the network server."""

from fhirgate.gateway import framing
from fhirgate.gateway.framing import Frame, decode_frame, encode_frame, encode_json
from fhirgate.gateway.server import GatewayServer
from fhirgate.gateway.service import (
    DeviceAllowlist,
    GatewayService,
    Session,
    sync_from_upstream,
)

__all__ = [
    "DeviceAllowlist",
    "Frame",
    "framing",
    "GatewayServer",
    "GatewayService",
    "Session",
    "decode_frame",
    "encode_frame",
    "encode_json",
    "sync_from_upstream",
]
