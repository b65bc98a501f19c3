"""FHIR timeline gateway.

Parses FHIR bundles into patient records, lays encounters out on a
density-warped timeline, extracts per-label surface meshes from voxel
volumes, and serves all of it to visualization clients over a framed
wire protocol (raw TCP and WebSocket).
"""

__version__ = "0.1.0"
