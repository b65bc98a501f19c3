"""Multi-label voxel volumes: a JSON header plus a raw voxel payload.

The payload is little-endian with x varying fastest; in memory labels are
held as a uint16 array indexed [x, y, z]. Physical placement of voxel
(i, j, k) is index * spacing + origin, in millimeters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from fhirgate.errors import (
    DimMismatch,
    LabelAbsent,
    MalformedHeader,
    SizeMismatch,
    UnsupportedDtype,
)

_DTYPES = {"u8": np.dtype("<u1"), "u16": np.dtype("<u2")}


@dataclass
class LabelVolume:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    labels: np.ndarray  # uint16, shape dims, indexed [x, y, z]

    def __post_init__(self):
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise MalformedHeader(f"dims must be 3 values >= 1, got {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise MalformedHeader(f"spacing must be 3 positive values, got {self.spacing}")
        if self.labels.shape != tuple(self.dims):
            raise SizeMismatch(
                f"labels shape {self.labels.shape} != dims {tuple(self.dims)}")

    def label_values(self) -> list[int]:
        """Distinct nonzero labels, ascending."""
        values = np.unique(self.labels)
        return [int(v) for v in values if v != 0]


def _header_fields(header_json: bytes):
    try:
        header = json.loads(header_json.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(str(exc)) from exc
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")
    try:
        dims = tuple(int(v) for v in header["dims"])
        spacing = tuple(float(v) for v in header["spacing"])
        origin = tuple(float(v) for v in header["origin"])
        dtype_name = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedHeader(f"bad or missing header field: {exc}") from exc
    return dims, spacing, origin, dtype_name


def load_label_volume(header_json: bytes, payload: bytes) -> LabelVolume:
    """Decode header + raw payload into a LabelVolume (u8 widened to u16)."""
    dims, spacing, origin, dtype_name = _header_fields(header_json)
    if dtype_name not in _DTYPES:
        raise UnsupportedDtype(f"dtype {dtype_name!r} not in {sorted(_DTYPES)}")
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise MalformedHeader(f"dims must be 3 values >= 1, got {dims}")
    dtype = _DTYPES[dtype_name]
    nx, ny, nz = dims
    expected = nx * ny * nz * dtype.itemsize
    if len(payload) != expected:
        raise SizeMismatch(f"payload is {len(payload)} bytes, expected {expected}")
    # file order is x-fastest, so the flat buffer reshapes as [z, y, x]
    flat = np.frombuffer(payload, dtype=dtype).reshape((nz, ny, nx))
    labels = np.ascontiguousarray(flat.transpose(2, 1, 0)).astype(np.uint16)
    return LabelVolume(dims=dims, spacing=spacing, origin=origin, labels=labels)


def save_label_volume(vol: LabelVolume) -> tuple[bytes, bytes]:
    """Inverse of load_label_volume; always writes u16."""
    header = {
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "origin": list(vol.origin),
        "dtype": "u16",
    }
    header_json = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = np.ascontiguousarray(
        vol.labels.astype("<u2").transpose(2, 1, 0)).tobytes()
    return header_json, payload


def _require_same_dims(a: LabelVolume, b: LabelVolume):
    if a.dims != b.dims:
        raise DimMismatch(f"{a.dims} vs {b.dims}")


def dice(a: LabelVolume, b: LabelVolume, label: int) -> float:
    """Dice overlap of one label between two volumes; empty-empty is 1.0."""
    _require_same_dims(a, b)
    mask_a = a.labels == label
    mask_b = b.labels == label
    size_a = int(np.count_nonzero(mask_a))
    size_b = int(np.count_nonzero(mask_b))
    if size_a + size_b == 0:
        return 1.0
    overlap = int(np.count_nonzero(mask_a & mask_b))
    return 2.0 * overlap / (size_a + size_b)


def centroid(vol: LabelVolume, label: int) -> tuple[float, float, float]:
    """Mean of the label's voxel centers, in physical millimeters."""
    coords = np.argwhere(vol.labels == label)
    if coords.shape[0] == 0:
        raise LabelAbsent(f"label {label} not present")
    mean = coords.mean(axis=0)
    return tuple(float(mean[i] * vol.spacing[i] + vol.origin[i]) for i in range(3))


def fuse_binary_masks(masks) -> LabelVolume:
    """Fuse per-label binary masks into one multi-label volume.

    Each item is (label, binary LabelVolume, confidence ndarray). A claimed
    voxel gets the label with the maximum confidence; ties go to the lowest
    label; unclaimed voxels stay 0.
    """
    if not masks:
        raise DimMismatch("no masks to fuse")
    first = masks[0][1]
    out = np.zeros(first.dims, dtype=np.uint16)
    best = np.full(first.dims, -np.inf, dtype=np.float64)
    # ascending label order makes "strictly greater" implement the tie rule
    for label, mask_vol, conf in sorted(masks, key=lambda m: m[0]):
        _require_same_dims(first, mask_vol)
        if conf.shape != tuple(first.dims):
            raise DimMismatch(f"confidence shape {conf.shape} vs dims {first.dims}")
        claimed = mask_vol.labels > 0
        wins = claimed & (conf > best)
        out[wins] = label
        best[wins] = conf[wins]
    return LabelVolume(dims=first.dims, spacing=first.spacing,
                       origin=first.origin, labels=out)
