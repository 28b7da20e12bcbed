import math

import numpy as np
import pytest

from epm.errors import FeatureError, FileFormatError, GeometryError
from epm.features import (
    Codebook,
    build_feature_tensor,
    extract_dense_descriptors,
    learn_codebook,
    load_codebook,
    load_tensor,
    quantize,
    quantize_batch,
    region_feature,
    region_features_batch,
    save_codebook,
    save_tensor,
)
from epm.geometry import Grid, PartLocation
from epm.image_io import GrayImage

from conftest import random_image, tensor_from_counts


def brute_force_nearest(vector, centroids):
    """Independent nearest-centroid scan in plain Python."""
    best, best_d = 0, math.inf
    for idx, c in enumerate(centroids):
        d = sum((float(a) - float(b)) ** 2 for a, b in zip(vector, c))
        if d < best_d:
            best, best_d = idx, d
    return best


def lattice_cell(frac, points):
    """Independent cell assignment: scan lattice fractions left to right."""
    cell = 0
    for a in range(points - 1):
        if frac >= a / (points - 1):
            cell = a
    return cell


def count_words_in_region(img, codebook, grid, step, patch_sizes, loc):
    """Direct recount oracle: quantize each descriptor and test containment."""
    i, j, k, l = grid.location_indices(loc)
    counts = np.zeros(codebook.k)
    for d in extract_dense_descriptors(img, step, patch_sizes):
        cx = lattice_cell(d.cx / img.width, grid.s)
        cy = lattice_cell(d.cy / img.height, grid.t)
        if i <= cx < k and j <= cy < l:
            counts[quantize(d.vector, codebook)] += 1
    return counts


class TestExtraction:
    def test_constant_image_gives_zero_vectors(self):
        img = GrayImage(16, 16, np.full((16, 16), 0.5))
        descs = extract_dense_descriptors(img, 4, [8])
        assert descs and all(not d.vector.any() for d in descs)

    def test_lattice_count(self, rng):
        img = random_image(rng, 64, 64)
        descs = extract_dense_descriptors(img, 4, [8])
        assert len(descs) == 15 * 15

    def test_multiple_patch_sizes_concatenate(self, rng):
        img = random_image(rng, 64, 64)
        descs = extract_dense_descriptors(img, 4, [8, 16])
        assert len(descs) == 15 * 15 + 13 * 13
        assert {d.patch_size for d in descs} == {8, 16}

    def test_vertical_step_edge_hits_horizontal_bins(self):
        pixels = np.zeros((32, 32))
        pixels[:, 16:] = 1.0
        img = GrayImage(32, 32, pixels)
        for d in extract_dense_descriptors(img, 4, [16]):
            v = d.vector.reshape(16, 8)
            horizontal = v[:, 0].sum() + v[:, 4].sum()
            assert horizontal == pytest.approx(v.sum(), abs=1e-12)

    def test_unit_norm_or_zero(self, rng):
        img = random_image(rng, 40, 28)
        for d in extract_dense_descriptors(img, 4, [8, 12]):
            n = np.linalg.norm(d.vector)
            assert n == pytest.approx(1.0, abs=1e-12) or n == 0.0

    def test_patch_too_large(self, rng):
        with pytest.raises(FeatureError, match="patch size"):
            extract_dense_descriptors(random_image(rng, 16, 16), 4, [17])

    def test_bad_step(self, rng):
        with pytest.raises(FeatureError, match="step"):
            extract_dense_descriptors(random_image(rng, 16, 16), 0, [8])


class TestCodebook:
    def test_far_apart_points_are_their_own_centroids(self):
        points = np.eye(4) * 100.0
        cb = learn_codebook(points, 4, max_iters=10, seed=0)
        got = {tuple(c) for c in cb.centroids}
        assert got == {tuple(p) for p in points}

    def test_identical_descriptors_leave_duplicates(self):
        data = np.tile([1.0, 2.0], (10, 1))
        cb = learn_codebook(data, 3, max_iters=5, seed=0)
        assert cb.k == 3
        assert all(np.allclose(c, [1.0, 2.0]) for c in cb.centroids)
        assert quantize(np.array([1.0, 2.0]), cb) == 0  # lowest-index tie-break

    def test_two_blobs_recover_means(self, rng):
        a = rng.normal(0.0, 0.05, (200, 3))
        b = rng.normal(5.0, 0.05, (200, 3)) + np.array([0, 1, 2])
        cb = learn_codebook(np.vstack([a, b]), 2, max_iters=30, seed=1)
        means = sorted([a.mean(axis=0), b.mean(axis=0)], key=lambda v: v[0])
        got = sorted(cb.centroids, key=lambda v: v[0])
        for m, c in zip(means, got):
            assert np.allclose(m, c, atol=0.02)

    def test_objective_non_increasing(self, rng):
        data = rng.random((300, 8))

        def wcss(cb):
            words = quantize_batch(data, cb)
            return float(((data - cb.centroids[words]) ** 2).sum())

        trajectory = [wcss(learn_codebook(data, 5, max_iters=i, seed=3))
                      for i in range(1, 9)]
        for earlier, later in zip(trajectory, trajectory[1:]):
            assert later <= earlier * (1 + 1e-12) + 1e-12

    def test_deterministic(self, rng):
        data = rng.random((100, 6))
        a = learn_codebook(data, 4, max_iters=10, seed=9)
        b = learn_codebook(data, 4, max_iters=10, seed=9)
        assert np.array_equal(a.centroids, b.centroids)

    def test_empty_input(self):
        with pytest.raises(FeatureError, match="zero descriptors"):
            learn_codebook(np.empty((0, 8)), 2)


class TestQuantize:
    def test_exact_centroid(self, rng):
        cb = Codebook(centroids=rng.random((10, 6)))
        assert quantize(cb.centroids[7], cb) == 7

    def test_equidistant_tie_breaks_low(self):
        centroids = np.zeros((6, 2))
        centroids[2] = [1.0, 0.0]
        centroids[5] = [-1.0, 0.0]
        centroids[0] = [9.0, 9.0]
        centroids[1] = [9.0, -9.0]
        centroids[3] = [-9.0, 9.0]
        centroids[4] = [-9.0, -9.0]
        assert quantize(np.array([0.0, 0.0]), Codebook(centroids=centroids)) == 2

    def test_matches_brute_force(self, rng):
        cb = Codebook(centroids=rng.random((17, 5)))
        vectors = rng.random((200, 5))
        batch = quantize_batch(vectors, cb)
        for v, got in zip(vectors, batch):
            assert got == brute_force_nearest(v, cb.centroids)
            assert quantize(v, cb) == got

    def test_dimension_mismatch(self, rng):
        cb = Codebook(centroids=rng.random((3, 4)))
        with pytest.raises(FeatureError, match="dimension"):
            quantize(np.zeros(5), cb)


class TestFeatureTensor:
    def make(self, rng, w=36, h=28, k=7, s=5, t=4):
        img = random_image(rng, w, h)
        cb = Codebook(centroids=rng.random((k, 128)))
        grid = Grid(s, t)
        return img, cb, grid, build_feature_tensor(img, cb, grid, 4, [8])

    def test_corner_totals_descriptor_count(self, rng):
        img, cb, grid, tensor = self.make(rng)
        total = tensor.values[-1, -1].sum()
        assert total == len(extract_dense_descriptors(img, 4, [8]))

    def test_edges_are_zero(self, rng):
        _, _, _, tensor = self.make(rng)
        assert not tensor.values[0, :, :].any()
        assert not tensor.values[:, 0, :].any()

    def test_monotone_along_axes(self, rng):
        _, _, _, tensor = self.make(rng)
        assert (np.diff(tensor.values, axis=0) >= 0).all()
        assert (np.diff(tensor.values, axis=1) >= 0).all()

    def test_single_descriptor_is_one_hot_prefix(self, rng):
        # image exactly one patch wide: a single descriptor at the center cell
        img = random_image(rng, 8, 8)
        vec = extract_dense_descriptors(img, 4, [8])[0].vector
        centroids = rng.random((5, 128)) + 2.0
        centroids[3] = vec
        tensor = build_feature_tensor(img, Codebook(centroids=centroids), Grid(3, 3), 4, [8])
        counts = np.zeros((3, 3, 5))
        counts[2, 2, 3] = counts[1, 1, 3] = counts[2, 1, 3] = counts[1, 2, 3] = 1
        # center (0.5, 0.5) is on the middle lattice point -> higher cell (1, 1)
        expect = np.zeros((3, 3, 5))
        expect[2, 2, 3] = 1
        assert np.array_equal(tensor.values, expect)

    def test_integral_equals_direct_recount(self, rng):
        img, cb, grid, tensor = self.make(rng)
        for _ in range(20):
            i, k = sorted(rng.choice(grid.s, 2, replace=False))
            j, l = sorted(rng.choice(grid.t, 2, replace=False))
            loc = grid.location_from_indices(i, j, k, l)
            direct = count_words_in_region(img, cb, grid, 4, [8], loc)
            ii, jj, kk, ll = grid.location_indices(loc)
            v = tensor.values
            raw = v[kk, ll] + v[ii, jj] - v[ii, ll] - v[kk, jj]
            assert np.array_equal(raw, direct)


class TestRegionFeature:
    def test_whole_image_is_sqrt_of_global_histogram(self, rng):
        counts = rng.integers(0, 5, (4, 4, 6)).astype(float)
        tensor = tensor_from_counts(counts)
        rf = region_feature(tensor, PartLocation(0, 0, 1, 1))
        hist = counts.sum(axis=(0, 1))
        assert np.allclose(rf.appearance, np.sqrt(hist / hist.sum()))
        assert rf.bias_slot == -1.0

    def test_empty_region_is_zero_with_bias(self):
        counts = np.zeros((4, 4, 3))
        counts[3, 3, 1] = 5.0
        tensor = tensor_from_counts(counts)
        rf = region_feature(tensor, PartLocation(0.0, 0.0, 0.5, 0.5))
        assert not rf.appearance.any()
        assert rf.as_vector()[-1] == -1.0

    def test_unit_norm_when_non_degenerate(self, rng):
        counts = rng.integers(0, 4, (6, 6, 9)).astype(float)
        tensor = tensor_from_counts(counts)
        grid = tensor.grid
        for _ in range(50):
            i, k = sorted(rng.choice(grid.s, 2, replace=False))
            j, l = sorted(rng.choice(grid.t, 2, replace=False))
            rf = region_feature(tensor, grid.location_from_indices(i, j, k, l))
            norm = np.linalg.norm(rf.appearance)
            assert norm == 0.0 or norm == pytest.approx(1.0, abs=1e-12)

    def test_random_region_matches_recount(self, rng):
        img = random_image(rng, 30, 30)
        cb = Codebook(centroids=rng.random((5, 128)))
        grid = Grid(6, 6)
        tensor = build_feature_tensor(img, cb, grid, 3, [8])
        loc = grid.location_from_indices(1, 0, 4, 3)
        direct = count_words_in_region(img, cb, grid, 3, [8], loc)
        expect = np.sqrt(direct / direct.sum()) if direct.sum() else direct
        assert np.allclose(region_feature(tensor, loc).appearance, expect)

    def test_off_lattice_rejected(self, rng):
        tensor = tensor_from_counts(np.ones((4, 4, 2)))
        with pytest.raises(GeometryError, match="lattice"):
            region_feature(tensor, PartLocation(0.1, 0.0, 0.9, 1.0))

    def test_batch_matches_single(self, rng):
        counts = rng.integers(0, 4, (4, 4, 5)).astype(float)
        tensor = tensor_from_counts(counts)
        locs = [PartLocation(0, 0, 0.5, 0.5), PartLocation(0.25, 0.25, 1, 1)]
        batch = region_features_batch(tensor, locs)
        for row, loc in zip(batch, locs):
            assert np.array_equal(row, region_feature(tensor, loc).as_vector())


class TestFileFormats:
    def test_codebook_round_trip(self, tmp_path, rng):
        cb = Codebook(centroids=rng.random((7, 9)))
        save_codebook(cb, tmp_path / "cb.txt")
        back = load_codebook(tmp_path / "cb.txt")
        assert np.array_equal(back.centroids, cb.centroids)

    def test_codebook_bad_magic(self, tmp_path):
        (tmp_path / "cb.txt").write_text("NOPE 1 1 1\n0\n")
        with pytest.raises(FileFormatError, match="unknown"):
            load_codebook(tmp_path / "cb.txt")

    def test_codebook_bad_version(self, tmp_path):
        (tmp_path / "cb.txt").write_text("EPMCB 9 1 1\n0\n")
        with pytest.raises(FileFormatError, match="version"):
            load_codebook(tmp_path / "cb.txt")

    def test_tensor_round_trip(self, tmp_path, rng):
        tensor = tensor_from_counts(rng.integers(0, 9, (5, 3, 4)).astype(float))
        save_tensor(tensor, tmp_path / "t.ft")
        back = load_tensor(tmp_path / "t.ft")
        assert back.grid == tensor.grid and back.d == tensor.d
        assert np.array_equal(back.values, tensor.values)

    def test_tensor_bad_magic(self, tmp_path):
        (tmp_path / "t.ft").write_bytes(b"EPMXX1" + bytes(12))
        with pytest.raises(FileFormatError, match="unknown"):
            load_tensor(tmp_path / "t.ft")

    def test_tensor_truncated(self, tmp_path):
        (tmp_path / "t.ft").write_bytes(b"EPMFT1" + np.array([2, 2, 1], "<i4").tobytes() + bytes(8))
        with pytest.raises(FileFormatError, match="corrupt"):
            load_tensor(tmp_path / "t.ft")
