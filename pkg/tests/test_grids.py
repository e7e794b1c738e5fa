"""Phantom generators and the .vxg round trip."""

import numpy as np
import pytest

import lvtomo as lv
from lvtomo.errors import FormatError, ParameterError
from lvtomo.grids import CylinderSpec, centered_origin

DIMS = (30, 140, 30)


class TestJetFlame:
    def test_peak_on_axis_is_one(self):
        g = lv.make_jet_flame(DIMS, 0.5)
        assert g.values.max() == pytest.approx(1.0)
        # Peak sits on the cone axis where the cone radius is still zero:
        # both on-axis cells straddling the center share the max by symmetry.
        i, j, k = np.unravel_index(np.argmax(g.values), DIMS)
        r = np.hypot(i - (DIMS[0] - 1) / 2, k - (DIMS[2] - 1) / 2)
        assert r < 1.0

    def test_zero_outside_bounding_cylinder(self):
        g = lv.make_jet_flame(DIMS, 0.5)
        xi = np.arange(DIMS[0]) - (DIMS[0] - 1) / 2
        zk = np.arange(DIMS[2]) - (DIMS[2] - 1) / 2
        r = np.sqrt(xi[:, None] ** 2 + zk[None, :] ** 2)
        outside = r > min(DIMS[0], DIMS[2]) / 2
        assert np.all(g.values[outside.nonzero()[0], :, outside.nonzero()[1]] == 0)

    def test_quarter_turn_symmetry(self):
        # 90-degree rotation about the vertical axis maps (i, k) -> (k, nx-1-i)
        # for the square cross-section; the analytic field only depends on the
        # rotation-invariant radius, so values agree.
        g = lv.make_jet_flame(DIMS, 0.5)
        rotated = np.rot90(g.values, k=1, axes=(0, 2))
        np.testing.assert_allclose(g.values, rotated, atol=1e-6)

    def test_deterministic(self):
        a = lv.make_jet_flame(DIMS, 0.5)
        b = lv.make_jet_flame(DIMS, 0.5)
        assert np.array_equal(a.values, b.values)

    @pytest.mark.parametrize("bad", [
        {"core_radius_fraction": 0.0},
        {"axial_peak_fraction": 1.5},
        {"radial_sigma_fraction": -0.1},
    ])
    def test_bad_fractions(self, bad):
        with pytest.raises(ParameterError):
            lv.make_jet_flame(DIMS, 0.5, bad)

    def test_bad_dims(self):
        with pytest.raises(ParameterError):
            lv.make_jet_flame((0, 3, 3), 0.5)
        with pytest.raises(ParameterError):
            lv.make_jet_flame((4, 4, 4), -1.0)


class TestTurbulentFlame:
    def test_same_seed_bit_identical(self):
        a = lv.make_turbulent_flame(DIMS, 0.5, seed=11)
        b = lv.make_turbulent_flame(DIMS, 0.5, seed=11)
        assert np.array_equal(a.values, b.values)

    def test_different_seeds_differ(self):
        a = lv.make_turbulent_flame(DIMS, 0.5, seed=1)
        b = lv.make_turbulent_flame(DIMS, 0.5, seed=2)
        assert lv.cosine_similarity(a, b) < 0.999

    def test_range(self):
        g = lv.make_turbulent_flame(DIMS, 0.5, seed=3)
        assert g.values.min() >= 0.0
        assert g.values.max() == pytest.approx(1.0)


class TestRandomizedHomogeneous:
    def test_outside_cylinder_zero(self):
        g = lv.make_randomized_homogeneous((20, 40, 20), 0.5, seed=4)
        mask = CylinderSpec.inscribed((20, 40, 20)).mask((20, 40, 20))
        assert np.all(g.values[~mask] == 0)

    def test_inside_distribution(self):
        g = lv.make_randomized_homogeneous((30, 140, 30), 0.5, seed=4)
        inside = g.values[g.values > 0]
        assert inside.size >= 10_000
        assert inside.min() >= 0.2 and inside.max() <= 1.0
        assert abs(float(inside.mean()) - 0.6) <= 0.02

    def test_same_seed_identical(self):
        a = lv.make_randomized_homogeneous(DIMS, 0.5, seed=9)
        b = lv.make_randomized_homogeneous(DIMS, 0.5, seed=9)
        assert np.array_equal(a.values, b.values)

    def test_cylinder_outside_grid(self):
        with pytest.raises(ParameterError):
            lv.make_randomized_homogeneous(
                (10, 10, 10), 0.5, 0, CylinderSpec(5.0, 5.0, 8.0, 0, 10)
            )


class TestGeneratorInvariants:
    def test_all_generators_finite_nonneg_max_le_one(self):
        grids = [
            lv.make_jet_flame((12, 30, 12), 0.5),
            lv.make_turbulent_flame((12, 30, 12), 0.5, seed=0),
            lv.make_randomized_homogeneous((12, 30, 12), 0.5, seed=0),
        ]
        for g in grids:
            assert np.all(np.isfinite(g.values))
            assert g.values.min() >= 0
            assert g.values.max() <= 1.0


class TestPersistence:
    def test_roundtrip_bit_exact_many_seeds(self, tmp_path):
        rng = np.random.default_rng(0)
        for seed in range(100):
            dims = tuple(int(d) for d in rng.integers(1, 7, size=3))
            vals = np.random.default_rng(seed).uniform(0, 1, size=dims).astype(np.float32)
            g = lv.VoxelGrid(dims, 0.25, centered_origin(dims, 0.25), vals)
            p = tmp_path / f"g{seed}.vxg"
            lv.save_grid(g, p)
            g2 = lv.load_grid(p)
            assert g2.dims == g.dims
            assert g2.voxel_size == g.voxel_size
            assert np.array_equal(g2.origin, g.origin)
            assert np.array_equal(g2.values, g.values)

    def test_flat_order_is_x_fastest(self, tmp_path):
        g = lv.VoxelGrid((2, 3, 2), 1.0, (0, 0, 0),
                         np.arange(12, dtype=np.float32).reshape(2, 3, 2))
        flat = g.flat_values()
        for k in range(2):
            for j in range(3):
                for i in range(2):
                    assert flat[g.flat_index(i, j, k)] == g.values[i, j, k]
        # and the file payload uses the same order
        p = tmp_path / "o.vxg"
        lv.save_grid(g, p)
        raw = p.read_bytes()
        import json as _json
        import struct as _struct
        (hlen,) = _struct.unpack_from("<I", raw, 4)
        payload = np.frombuffer(raw, "<f4", offset=8 + hlen)
        assert np.array_equal(payload, flat)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.vxg"
        p.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(FormatError) as ei:
            lv.load_grid(p)
        assert ei.value.offset == 0

    def test_payload_mismatch(self, tmp_path):
        import json as _json
        import struct as _struct
        header = _json.dumps(
            {"dims": [2, 2, 2], "voxel_size_mm": 1.0, "origin_mm": [0, 0, 0]}
        ).encode()
        p = tmp_path / "short.vxg"
        p.write_bytes(b"VXG1" + _struct.pack("<I", len(header)) + header
                      + b"\x00" * (7 * 4))  # 7 floats instead of 8
        with pytest.raises(FormatError) as ei:
            lv.load_grid(p)
        assert ei.value.offset == 8 + len(header)
