"""Traversal correctness: chord conservation, the sampling oracle, adjacency,
reversibility, and scalar/bulk agreement."""

import numpy as np
import pytest

import lvtomo as lv
from lvtomo.grids import centered_origin
from lvtomo.tracing import box_chord_length, trace_impacting_voxels, trace_rays_bulk


def sampling_oracle(ray, grid, n_samples=100_000):
    """Independent per-voxel chord lengths: classify deterministic uniformly
    spaced samples (midpoints of equal sub-intervals) along the box chord.

    Returns (flat_index -> length) plus the chord length. Uses its own slab
    intersection, not the traversal's.
    """
    o, d = ray.origin, ray.direction
    lo = grid.origin
    hi = grid.origin + np.asarray(grid.dims) * grid.voxel_size
    t0, t1 = 0.0, np.inf
    for ax in range(3):
        if d[ax] != 0.0:
            ta = (lo[ax] - o[ax]) / d[ax]
            tb = (hi[ax] - o[ax]) / d[ax]
            t0 = max(t0, min(ta, tb))
            t1 = min(t1, max(ta, tb))
        elif not (lo[ax] <= o[ax] <= hi[ax]):
            return {}, 0.0
    if t1 <= t0:
        return {}, 0.0
    ts = t0 + (t1 - t0) * (np.arange(n_samples) + 0.5) / n_samples
    pts = o[None, :] + ts[:, None] * d[None, :]
    ijk = np.floor((pts - lo[None, :]) / grid.voxel_size).astype(np.int64)
    np.clip(ijk, 0, np.asarray(grid.dims) - 1, out=ijk)
    nx, ny, _ = grid.dims
    flat = ijk[:, 0] + ijk[:, 1] * nx + ijk[:, 2] * nx * ny
    counts = np.bincount(flat)
    chord = t1 - t0
    lengths = {int(f): counts[f] * chord / n_samples for f in np.nonzero(counts)[0]}
    return lengths, chord


def random_hitting_rays(rng, grid, count):
    """Rays aimed at random points inside the grid from random outside origins."""
    lo = grid.origin
    ext = grid.extent
    rays = []
    while len(rays) < count:
        target = lo + rng.uniform(0.1, 0.9, 3) * ext
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        origin = target - direction * (np.linalg.norm(ext) * rng.uniform(1.5, 4.0))
        rays.append(lv.Ray(origin, direction))
    return rays


def random_grid(rng, max_dim=32):
    dims = tuple(int(d) for d in rng.integers(2, max_dim + 1, size=3))
    vs = float(rng.uniform(0.2, 2.0))
    return lv.VoxelGrid(dims, vs, centered_origin(dims, vs),
                        np.zeros(dims, np.float32))


class TestTrivialCases:
    def test_axis_aligned_row(self):
        g = lv.VoxelGrid((30, 4, 4), 0.5, (0, 0, 0), np.zeros((30, 4, 4), np.float32))
        ray = lv.Ray((-5.0, 0.75, 0.75), (1.0, 0.0, 0.0))
        seq = trace_impacting_voxels(ray, g)
        assert seq.n == 30
        np.testing.assert_allclose(seq.seg_lengths, 0.5, atol=1e-12)
        assert np.array_equal(seq.indices[:, 0], np.arange(30))
        assert np.all(seq.indices[:, 1] == 1)
        assert np.all(seq.indices[:, 2] == 1)

    def test_miss_is_empty(self):
        g = lv.VoxelGrid((4, 4, 4), 1.0, (0, 0, 0), np.zeros((4, 4, 4), np.float32))
        ray = lv.Ray((10.0, 10.0, 0.0), (0.0, 0.0, 1.0))
        assert trace_impacting_voxels(ray, g).n == 0

    def test_seg_points_inside_their_voxels(self):
        rng = np.random.default_rng(3)
        g = random_grid(rng, max_dim=8)
        for ray in random_hitting_rays(rng, g, 20):
            seq = trace_impacting_voxels(ray, g)
            cells = np.floor((seq.seg_points - g.origin) / g.voxel_size)
            np.testing.assert_array_equal(cells.astype(np.int64), seq.indices)


class TestOracle:
    def test_oblique_ray_3x3x3(self):
        g = lv.VoxelGrid((3, 3, 3), 1.0, (0, 0, 0), np.zeros((3, 3, 3), np.float32))
        d = np.array([1.0, 0.7, 0.4])
        d /= np.linalg.norm(d)
        ray = lv.Ray((-1.0, 0.1, 0.2), d)
        seq = trace_impacting_voxels(ray, g)
        oracle, chord = sampling_oracle(ray, g)
        assert seq.n == len(oracle)
        for idx, length in zip(seq.indices, seq.seg_lengths):
            flat = int(idx[0] + idx[1] * 3 + idx[2] * 9)
            assert abs(length - oracle[flat]) < 1e-3 * g.voxel_size

    def test_random_rays_against_random_grids(self):
        rng = np.random.default_rng(42)
        for trial in range(6):
            g = random_grid(rng)
            nx, ny, _ = g.dims
            for ray in random_hitting_rays(rng, g, 10):
                seq = trace_impacting_voxels(ray, g)
                total = seq.seg_lengths.sum()
                chord = box_chord_length(ray, g)
                assert total == pytest.approx(chord, rel=1e-9)
                oracle, _ = sampling_oracle(ray, g)
                flats = seq.indices[:, 0] + seq.indices[:, 1] * nx + seq.indices[:, 2] * nx * ny
                for f, length in zip(flats, seq.seg_lengths):
                    assert abs(length - oracle.get(int(f), 0.0)) < 1e-3 * g.voxel_size


class TestInvariants:
    def test_chord_conservation(self):
        rng = np.random.default_rng(7)
        g = random_grid(rng)
        for ray in random_hitting_rays(rng, g, 50):
            seq = trace_impacting_voxels(ray, g)
            assert seq.seg_lengths.sum() == pytest.approx(
                box_chord_length(ray, g), rel=1e-9
            )

    def test_adjacency(self):
        rng = np.random.default_rng(8)
        g = random_grid(rng)
        for ray in random_hitting_rays(rng, g, 50):
            seq = trace_impacting_voxels(ray, g)
            if seq.n > 1:
                steps = np.abs(np.diff(seq.indices, axis=0))
                assert steps.max() <= 1

    def test_hits_ordered_and_positive(self):
        rng = np.random.default_rng(9)
        g = random_grid(rng, max_dim=16)
        for ray in random_hitting_rays(rng, g, 30):
            seq = trace_impacting_voxels(ray, g)
            assert np.all(seq.seg_lengths > 0)
            t = (seq.seg_points - ray.origin[None, :]) @ ray.direction
            assert np.all(np.diff(t) > 0)

    def test_reversibility(self):
        rng = np.random.default_rng(10)
        g = lv.VoxelGrid((6, 9, 5), 0.8, centered_origin((6, 9, 5), 0.8),
                         np.zeros((6, 9, 5), np.float32))
        for ray in random_hitting_rays(rng, g, 40):
            seq = trace_impacting_voxels(ray, g)
            if seq.n == 0:
                continue
            far = ray.origin + ray.direction * 100.0
            back = lv.Ray(far, -ray.direction)
            rseq = trace_impacting_voxels(back, g)
            assert rseq.n == seq.n
            np.testing.assert_array_equal(rseq.indices, seq.indices[::-1])
            np.testing.assert_allclose(
                rseq.seg_lengths, seq.seg_lengths[::-1], atol=1e-12
            )


class TestBulkAgainstScalar:
    def test_bulk_matches_per_ray(self):
        rng = np.random.default_rng(11)
        g = random_grid(rng, max_dim=12)
        rays = random_hitting_rays(rng, g, 64)
        dirs = np.stack([r.direction for r in rays])
        origins = np.stack([r.origin for r in rays])
        sweep = trace_rays_bulk(origins, dirs, g)
        off = sweep.offsets()
        for i, ray in enumerate(rays):
            seq = trace_impacting_voxels(ray, g)
            lo, hi = off[i], off[i + 1]
            assert hi - lo == seq.n
            np.testing.assert_array_equal(sweep.ijk[lo:hi], seq.indices)
            np.testing.assert_allclose(sweep.seg_len[lo:hi], seq.seg_lengths,
                                       rtol=0, atol=1e-12)
