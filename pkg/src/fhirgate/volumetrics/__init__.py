"""Multi-label voxel volumes and per-label surface meshes."""

from fhirgate.volumetrics.labelvol import (
    LabelVolume,
    centroid,
    dice,
    fuse_binary_masks,
    load_label_volume,
    save_label_volume,
)
from fhirgate.volumetrics.meshing import (
    SurfaceMesh,
    decode_mesh,
    encode_mesh,
    extract_mesh,
)

__all__ = [
    "LabelVolume",
    "load_label_volume",
    "save_label_volume",
    "dice",
    "centroid",
    "fuse_binary_masks",
    "SurfaceMesh",
    "extract_mesh",
    "encode_mesh",
    "decode_mesh",
]
