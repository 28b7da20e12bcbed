import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epm.errors import GeometryError
from epm.geometry import (
    Grid,
    PartLocation,
    align_to_grid,
    iou,
    sample_candidate_locations,
)


def boxes(draw):
    x1 = draw(st.floats(0.0, 0.98))
    y1 = draw(st.floats(0.0, 0.98))
    x2 = draw(st.floats(min(x1 + 0.01, 1.0), 1.0))
    y2 = draw(st.floats(min(y1 + 0.01, 1.0), 1.0))
    return PartLocation(x1, y1, x2, y2)


box_strategy = st.composite(boxes)()


class TestIou:
    def test_identity(self):
        a = PartLocation(0.1, 0.2, 0.6, 0.9)
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(PartLocation(0, 0, 0.5, 0.5), PartLocation(0.5, 0.5, 1, 1)) == 0.0

    def test_quarter_shifted_overlap(self):
        # inter 0.0625, union 0.4375 -> exactly 1/7
        a = PartLocation(0, 0, 0.5, 0.5)
        b = PartLocation(0.25, 0.25, 0.75, 0.75)
        assert iou(a, b) == pytest.approx(1 / 7, abs=1e-15)

    @given(box_strategy, box_strategy)
    @settings(max_examples=200)
    def test_symmetric(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(box_strategy, box_strategy)
    @settings(max_examples=200)
    def test_bounded_by_area_ratio(self, a, b):
        ratio = min(a.area, b.area) / max(a.area, b.area)
        assert 0.0 <= iou(a, b) <= ratio + 1e-12


class TestAlignToGrid:
    def test_lattice_point_fixed(self):
        g = Grid(5, 5)
        loc = PartLocation(0.25, 0.0, 0.75, 0.5)
        assert align_to_grid(loc, g) == loc

    def test_nearest_snap(self):
        g = Grid(5, 5)
        assert align_to_grid(PartLocation(0.1, 0.1, 0.6, 0.6), g) == PartLocation(0.0, 0.0, 0.5, 0.5)

    def test_degenerate_snap_expands_up(self):
        g = Grid(5, 5)
        out = align_to_grid(PartLocation(0.24, 0.24, 0.26, 0.26), g)
        assert out == PartLocation(0.25, 0.25, 0.5, 0.5)

    def test_degenerate_snap_at_top_expands_down(self):
        g = Grid(5, 5)
        out = align_to_grid(PartLocation(0.97, 0.97, 0.99, 0.99), g)
        assert out == PartLocation(0.75, 0.75, 1.0, 1.0)

    @given(box_strategy, st.integers(2, 9), st.integers(2, 9))
    @settings(max_examples=200)
    def test_idempotent(self, loc, s, t):
        g = Grid(s, t)
        once = align_to_grid(loc, g)
        assert align_to_grid(once, g) == once

    @given(box_strategy, st.integers(2, 9), st.integers(2, 9))
    @settings(max_examples=200)
    def test_output_on_lattice_with_min_span(self, loc, s, t):
        g = Grid(s, t)
        out = align_to_grid(loc, g)
        i, j, k, l = g.location_indices(out)
        assert k - i >= 1 and l - j >= 1


class TestSampling:
    def test_deterministic_given_seed(self):
        g = Grid(9, 9)
        assert sample_candidate_locations(g, 5, 2, 42) == sample_candidate_locations(g, 5, 2, 42)

    def test_all_aligned_with_min_span(self):
        g = Grid(9, 7)
        for loc in sample_candidate_locations(g, 200, 3, 7):
            i, j, k, l = g.location_indices(loc)
            assert k - i >= 3 and l - j >= 3

    def test_two_point_grid_forces_unit_box(self):
        g = Grid(2, 2)
        out = sample_candidate_locations(g, 3, 1, 0)
        assert out == [PartLocation(0, 0, 1, 1)] * 3

    def test_impossible_span(self):
        with pytest.raises(GeometryError):
            sample_candidate_locations(Grid(2, 2), 1, 2, 0)

    def test_generator_stream_advances(self):
        g = Grid(9, 9)
        gen = np.random.default_rng(0)
        first = sample_candidate_locations(g, 5, 2, gen)
        second = sample_candidate_locations(g, 5, 2, gen)
        assert first != second

    def test_uniform_over_index_tuples(self):
        # 3-point axis with min_cells=1 has pairs (0,1), (0,2), (1,2)
        g = Grid(3, 3)
        locs = sample_candidate_locations(g, 9000, 1, 3)
        spans = [g.location_indices(loc)[:3:2] for loc in locs]
        _, counts = np.unique(np.array(spans), axis=0, return_counts=True)
        assert counts.min() > 0.8 * 3000 and counts.max() < 1.2 * 3000


class TestGridValidation:
    def test_needs_two_points(self):
        with pytest.raises(GeometryError):
            Grid(1, 5)

    def test_off_lattice_rejected(self):
        with pytest.raises(GeometryError, match="lattice"):
            Grid(5, 5).x_index(0.3)

    def test_default_grid_is_16_cells(self):
        g = Grid()
        assert (g.s, g.t) == (17, 17)

    def test_location_validation(self):
        with pytest.raises(GeometryError):
            PartLocation(0.5, 0.0, 0.5, 1.0)
        with pytest.raises(GeometryError):
            PartLocation(-0.1, 0.0, 0.5, 1.0)
