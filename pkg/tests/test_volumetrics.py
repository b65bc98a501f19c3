"""Label volumes, Dice, fusion, meshing, and the EXRM format."""

import json

import numpy as np
import pytest

from conftest import load_oracle
from fhirgate.errors import (
    BadMagic,
    DimMismatch,
    LabelAbsent,
    LabelIsZero,
    MalformedHeader,
    SizeMismatch,
    Truncated,
    UnsupportedDtype,
)
from fhirgate.volumetrics import (
    LabelVolume,
    centroid,
    decode_mesh,
    dice,
    encode_mesh,
    extract_mesh,
    fuse_binary_masks,
    load_label_volume,
    save_label_volume,
)

oracle = load_oracle("mesh_oracle")


def header(dims=(2, 2, 2), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), dtype="u8"):
    return json.dumps({"dims": list(dims), "spacing": list(spacing),
                       "origin": list(origin), "dtype": dtype}).encode()


def cube_volume(dims=(3, 3, 3), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    return LabelVolume(dims, spacing, origin, np.zeros(dims, np.uint16))


class TestLoadSave:
    def test_2x2x2_u8(self):
        vol = load_label_volume(header(), bytes(range(8)))
        assert vol.dims == (2, 2, 2)
        assert vol.labels.size == 8
        assert vol.labels.dtype == np.uint16

    def test_x_fastest_ordering(self):
        # flat index = x + nx*y + nx*ny*z
        vol = load_label_volume(header(), bytes(range(8)))
        assert vol.labels[1, 0, 0] == 1
        assert vol.labels[0, 1, 0] == 2
        assert vol.labels[0, 0, 1] == 4
        assert vol.labels[1, 1, 1] == 7

    def test_u16_little_endian(self):
        payload = b"\x01\x00" + b"\x00\x00" * 7
        vol = load_label_volume(header(dtype="u16"), payload)
        assert vol.labels[0, 0, 0] == 1
        assert vol.labels.sum() == 1

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            load_label_volume(header(), bytes(7))
        with pytest.raises(SizeMismatch):
            load_label_volume(header(dtype="u16"), bytes(8))

    def test_unsupported_dtype(self):
        with pytest.raises(UnsupportedDtype):
            load_label_volume(header(dtype="f32"), bytes(32))

    def test_malformed_headers(self):
        with pytest.raises(MalformedHeader):
            load_label_volume(b"{not json", bytes(8))
        with pytest.raises(MalformedHeader):
            load_label_volume(b'{"dims":[2,2]}', bytes(8))
        with pytest.raises(MalformedHeader):
            load_label_volume(json.dumps(
                {"dims": [0, 2, 2], "spacing": [1, 1, 1],
                 "origin": [0, 0, 0], "dtype": "u8"}).encode(), b"")

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 5, size=(4, 3, 2)).astype(np.uint16)
        vol = LabelVolume((4, 3, 2), (1.0, 2.0, 3.0), (5.0, 6.0, 7.0), labels)
        hdr, payload = save_label_volume(vol)
        back = load_label_volume(hdr, payload)
        assert back.dims == vol.dims
        assert back.spacing == vol.spacing
        assert back.origin == vol.origin
        assert np.array_equal(back.labels, vol.labels)
        # saving again is byte-identical
        assert save_label_volume(back) == (hdr, payload)


class TestDice:
    def test_identical_masks(self):
        vol = cube_volume()
        vol.labels[0:2, 0:2, 0:2] = 3
        assert dice(vol, vol, 3) == 1.0

    def test_disjoint_masks(self):
        a, b = cube_volume(), cube_volume()
        a.labels[0, 0, 0] = 1
        b.labels[2, 2, 2] = 1
        assert dice(a, b, 1) == 0.0

    def test_half_overlap(self):
        a, b = cube_volume((4, 4, 4)), cube_volume((4, 4, 4))
        a.labels[0:2, 0:2, 0:2] = 1  # 8 voxels
        b.labels[0:2, 0:2, 1:3] = 1  # 8 voxels, 4 shared
        assert dice(a, b, 1) == 0.5
        assert dice(b, a, 1) == 0.5

    def test_empty_empty_is_one(self):
        assert dice(cube_volume(), cube_volume(), 9) == 1.0

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            dice(cube_volume((2, 2, 2)), cube_volume((3, 3, 3)), 1)


class TestCentroid:
    def test_mean_of_two_points(self):
        vol = cube_volume()
        vol.labels[0, 0, 0] = 1
        vol.labels[2, 0, 0] = 1
        assert centroid(vol, 1) == (1.0, 0.0, 0.0)

    def test_affine_map(self):
        vol = cube_volume((4, 4, 4), spacing=(2.0, 2.0, 2.0), origin=(10.0, 0.0, 0.0))
        vol.labels[1, 2, 3] = 5
        assert centroid(vol, 5) == (12.0, 4.0, 6.0)

    def test_label_absent(self):
        with pytest.raises(LabelAbsent):
            centroid(cube_volume(), 1)

    def test_sphere_symmetry(self):
        vol = cube_volume((11, 11, 11))
        for x, y, z in oracle.sphere_voxels(4.0, (5, 5, 5)):
            vol.labels[x, y, z] = 1
        cx, cy, cz = centroid(vol, 1)
        assert abs(cx - 5) < 0.1 and abs(cy - 5) < 0.1 and abs(cz - 5) < 0.1


class TestFusion:
    def binary(self, coords, dims=(3, 3, 3)):
        vol = cube_volume(dims)
        for c in coords:
            vol.labels[c] = 1
        return vol

    def test_disjoint_union(self):
        a = self.binary([(0, 0, 0)])
        b = self.binary([(2, 2, 2)])
        ones = np.ones((3, 3, 3))
        fused = fuse_binary_masks([(1, a, ones), (2, b, ones)])
        assert fused.labels[0, 0, 0] == 1
        assert fused.labels[2, 2, 2] == 2
        assert int(np.count_nonzero(fused.labels)) == 2

    def test_max_confidence_wins(self):
        a = self.binary([(1, 1, 1)])
        b = self.binary([(1, 1, 1)])
        fused = fuse_binary_masks([
            (1, a, np.full((3, 3, 3), 0.4)),
            (2, b, np.full((3, 3, 3), 0.9)),
        ])
        assert fused.labels[1, 1, 1] == 2

    def test_tie_goes_to_lower_label(self):
        a = self.binary([(1, 1, 1)])
        b = self.binary([(1, 1, 1)])
        ones = np.ones((3, 3, 3))
        fused = fuse_binary_masks([(5, b, ones), (2, a, ones)])
        assert fused.labels[1, 1, 1] == 2

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            fuse_binary_masks([
                (1, self.binary([(0, 0, 0)]), np.ones((3, 3, 3))),
                (2, self.binary([(0, 0, 0)], dims=(2, 2, 2)), np.ones((2, 2, 2))),
            ])

    def test_idempotent_on_own_decomposition(self):
        a = self.binary([(0, 0, 0), (1, 1, 1)])
        b = self.binary([(1, 1, 1), (2, 2, 2)])
        fused = fuse_binary_masks([(1, a, np.full((3, 3, 3), 0.7)),
                                   (2, b, np.full((3, 3, 3), 0.3))])
        masks = []
        for label in fused.label_values():
            part = cube_volume()
            part.labels[fused.labels == label] = 1
            masks.append((label, part, np.ones((3, 3, 3))))
        again = fuse_binary_masks(masks)
        assert np.array_equal(again.labels, fused.labels)


def sphere_label_volume(radius, margin=4):
    n = int(2 * radius + 2 * margin + 1)
    c = n // 2
    vol = cube_volume((n, n, n))
    for x, y, z in oracle.sphere_voxels(radius, (c, c, c)):
        vol.labels[x, y, z] = 1
    return vol


class TestExtractMesh:
    def test_background_label_rejected(self):
        with pytest.raises(LabelIsZero):
            extract_mesh(cube_volume(), 0)

    def test_absent_label_gives_empty_mesh(self):
        mesh = extract_mesh(cube_volume(), 4)
        assert mesh.is_empty
        assert mesh.centroid is None
        assert len(mesh.triangles) == 0

    def test_single_voxel_watertight_and_bounded(self):
        vol = cube_volume()
        vol.labels[1, 1, 1] = 7
        mesh = extract_mesh(vol, 7)
        tris = mesh.triangles.tolist()
        assert oracle.is_watertight(tris)
        volume = oracle.signed_volume(mesh.vertices.tolist(), tris)
        assert 0.4 <= volume <= 1.0  # positive: winding is outward
        assert mesh.centroid == (1.0, 1.0, 1.0)

    def test_boundary_touching_label_still_closes(self):
        vol = cube_volume()
        vol.labels[0, :, :] = 2  # flush against the volume face
        mesh = extract_mesh(vol, 2)
        assert oracle.is_watertight(mesh.triangles.tolist())
        assert oracle.signed_volume(mesh.vertices.tolist(),
                                    mesh.triangles.tolist()) > 0

    @pytest.mark.parametrize("radius,bound", [(5, 0.08), (10, 0.05), (15, 0.04)])
    def test_sphere_volume_within_bound(self, radius, bound):
        mesh = extract_mesh(sphere_label_volume(radius), 1)
        volume = oracle.signed_volume(mesh.vertices.tolist(), mesh.triangles.tolist())
        analytic = oracle.sphere_volume(radius)
        assert abs(volume - analytic) / analytic < bound
        assert oracle.is_watertight(mesh.triangles.tolist())

    def test_sphere_error_monotonically_decreases(self):
        errors = []
        for radius in (5, 10, 15):
            mesh = extract_mesh(sphere_label_volume(radius), 1)
            volume = oracle.signed_volume(mesh.vertices.tolist(),
                                          mesh.triangles.tolist())
            analytic = oracle.sphere_volume(radius)
            errors.append(abs(volume - analytic) / analytic)
        assert errors[0] > errors[1] > errors[2]

    def test_vertices_welded_unique(self):
        vol = cube_volume()
        vol.labels[1, 1, 1] = 1
        mesh = extract_mesh(vol, 1)
        rounded = np.round(mesh.vertices, 6)
        assert len(np.unique(rounded, axis=0)) == len(mesh.vertices)
        assert mesh.triangles.max() < len(mesh.vertices)

    def test_physical_placement(self):
        vol = cube_volume((3, 3, 3), spacing=(2.0, 3.0, 4.0), origin=(10.0, 20.0, 30.0))
        vol.labels[1, 1, 1] = 1
        mesh = extract_mesh(vol, 1)
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        # voxel center at origin + index*spacing = (12, 23, 34), extent one voxel
        assert lo == pytest.approx([11.0, 21.5, 32.0], abs=1e-5)
        assert hi == pytest.approx([13.0, 24.5, 36.0], abs=1e-5)

    def test_deterministic(self):
        vol = sphere_label_volume(5)
        a = encode_mesh(extract_mesh(vol, 1))
        b = encode_mesh(extract_mesh(vol, 1))
        assert a == b


class TestMeshCodec:
    def test_round_trip(self):
        vol = cube_volume()
        vol.labels[1, 1, 1] = 9
        mesh = extract_mesh(vol, 9)
        back = decode_mesh(encode_mesh(mesh))
        assert back.label == 9
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.triangles, mesh.triangles)
        assert back.centroid == pytest.approx(mesh.centroid)

    def test_empty_mesh_is_header_only(self):
        blob = encode_mesh(extract_mesh(cube_volume(), 3))
        assert len(blob) == 26  # magic + u16 + 2*u32 + 3*f32
        back = decode_mesh(blob)
        assert back.is_empty
        assert back.centroid is None

    def test_layout_prefix(self):
        vol = cube_volume()
        vol.labels[1, 1, 1] = 0x0102
        blob = encode_mesh(extract_mesh(vol, 0x0102))
        assert blob[:4] == b"EXRM"
        assert blob[4:6] == b"\x02\x01"  # little-endian label

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            decode_mesh(b"NOPE" + bytes(22))

    def test_truncated(self):
        vol = cube_volume()
        vol.labels[1, 1, 1] = 1
        blob = encode_mesh(extract_mesh(vol, 1))
        with pytest.raises(Truncated):
            decode_mesh(blob[:10])
        with pytest.raises(Truncated):
            decode_mesh(blob[:-4])
        with pytest.raises(Truncated):
            decode_mesh(blob + b"\x00")
