"""Grid construction, boundary segmentation and stencil selection."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from rootflow.cloud import (
    BoundarySegment,
    build_stencils,
    build_tensor_grid,
    operator_stencils,
    quadrature_weights,
)


def brute_stencils(coords, n_s):
    """Reference selection: full sort by (squared distance, index)."""
    coords = np.asarray(coords, float)
    n = len(coords)
    out = np.empty((n, n_s), dtype=np.int32)
    for i in range(n):
        d2 = np.sum((coords - coords[i]) ** 2, axis=1)
        out[i] = np.lexsort((np.arange(n), d2))[:n_s]
    return out


class TestTensorGrid:

    def test_layout_z_fastest(self):
        c = build_tensor_grid([(0.0, 2.0), (0.0, 3.0)], (3, 4))
        assert c.n == 12 and c.dim == 2
        assert_allclose(c.spacing, [1.0, 1.0])
        # flat index is ix * Nz + iz
        assert_allclose(c.coords[0], [0.0, 0.0])
        assert_allclose(c.coords[1], [0.0, 1.0])
        assert_allclose(c.coords[5], [1.0, 1.0])
        assert_allclose(c.coords[-1], [2.0, 3.0])

    def test_axis_neighbors(self):
        c = build_tensor_grid([(0.0, 2.0), (0.0, 3.0)], (3, 4))
        assert c.axis_neighbors[5].tolist() == [[1, 9], [4, 6]]
        assert c.axis_neighbors[0].tolist() == [[-1, 4], [-1, 1]]  # bottom-left corner
        assert c.axis_neighbors[11].tolist() == [[7, -1], [10, -1]]

    def test_face_priority_vertical_wins(self):
        c = build_tensor_grid([(0.0, 1.0), (0.0, 1.0)], (3, 3))
        names = c.face_names
        assert names[c.face_id[2]] == "top"      # (x=0, z=1) corner
        assert names[c.face_id[0]] == "bottom"   # (0, 0) corner
        assert names[c.face_id[1]] == "left"     # (0, 0.5) edge
        assert c.face_id[4] == -1                # center

    def test_face_membership_kept_at_corners(self):
        segs = [
            BoundarySegment("irrigated", "top", "neumann", x_range=(0.0, 0.5)),
            BoundarySegment("dry", "top", "neumann", x_range=(0.5, 1.0)),
            BoundarySegment("west", "left", "neumann"),
            BoundarySegment("east", "right", "neumann"),
            BoundarySegment("outlet", "bottom", "neumann"),
        ]
        c = build_tensor_grid([(0.0, 1.0), (0.0, 1.0)], (3, 3), segs)
        top_left = 2
        f_top = c.face_index("top")
        f_left = c.face_index("left")
        assert c.segments[c.seg_of_face[top_left, f_top]].name == "irrigated"
        assert c.segments[c.seg_of_face[top_left, f_left]].name == "west"
        # primary assignment follows face priority
        assert c.segments[c.segment_id[top_left]].name == "irrigated"

    def test_split_face_first_match_wins(self):
        segs = [
            BoundarySegment("irrigated", "top", "neumann", x_range=(0.0, 0.5)),
            BoundarySegment("dry", "top", "neumann", x_range=(0.5, 1.0)),
            BoundarySegment("west", "left", "neumann"),
            BoundarySegment("east", "right", "neumann"),
            BoundarySegment("outlet", "bottom", "dirichlet"),
        ]
        c = build_tensor_grid([(0.0, 1.0), (0.0, 1.0)], (5, 3), segs)
        shared = np.flatnonzero(
            (c.coords[:, 0] == 0.5) & (c.coords[:, 1] == 1.0))[0]
        assert c.segments[c.segment_id[shared]].name == "irrigated"
        x_irr = c.coords[c.segment_nodes("irrigated"), 0]
        assert x_irr.max() == 0.5
        assert c.coords[c.segment_nodes("dry"), 0].min() > 0.5

    def test_coverage_gap_rejected(self):
        segs = [
            BoundarySegment("a", "top", "neumann", x_range=(0.0, 0.4)),
            BoundarySegment("b", "top", "neumann", x_range=(0.6, 1.0)),
            BoundarySegment("west", "left", "neumann"),
            BoundarySegment("east", "right", "neumann"),
            BoundarySegment("outlet", "bottom", "dirichlet"),
        ]
        with pytest.raises(ValueError, match="not fully covered"):
            build_tensor_grid([(0.0, 1.0), (0.0, 1.0)], (5, 3), segs)

    def test_validation(self):
        with pytest.raises(ValueError):
            build_tensor_grid([(0.0, 1.0)], (1,))
        with pytest.raises(ValueError):
            build_tensor_grid([(1.0, 1.0)], (5,))
        with pytest.raises(ValueError, match="duplicate"):
            build_tensor_grid([(0.0, 1.0)], (5,), [
                BoundarySegment("s", "top", "neumann"),
                BoundarySegment("s", "bottom", "neumann"),
            ])
        with pytest.raises(ValueError, match="unknown face"):
            build_tensor_grid([(0.0, 1.0)], (5,), [
                BoundarySegment("s", "east", "neumann"),
                BoundarySegment("t", "bottom", "neumann"),
            ])
        with pytest.raises(ValueError, match="matches no nodes"):
            build_tensor_grid([(0.0, 1.0), (0.0, 1.0)], (3, 3), [
                BoundarySegment("nowhere", "top", "neumann", x_range=(2.0, 3.0)),
                BoundarySegment("rest", "top", "neumann"),
                BoundarySegment("west", "left", "neumann"),
                BoundarySegment("east", "right", "neumann"),
                BoundarySegment("outlet", "bottom", "dirichlet"),
            ])
        with pytest.raises(ValueError):
            BoundarySegment("s", "top", "robin")

    def test_1d_and_3d_faces(self):
        c1 = build_tensor_grid([(0.0, 1.0)], (5,))
        assert c1.face_names[c1.face_id[0]] == "bottom"
        assert c1.face_names[c1.face_id[4]] == "top"
        assert np.all(c1.face_id[1:4] == -1)
        c3 = build_tensor_grid([(0.0, 1.0)] * 3, (2, 2, 2))
        assert {c3.face_names[f] for f in c3.face_id} == {"bottom", "top"}


class TestQuadrature:

    def test_total_is_volume(self):
        c = build_tensor_grid([(0.0, 2.0), (0.0, 3.0)], (9, 7))
        assert_allclose(quadrature_weights(c).sum(), 6.0, rtol=1e-14)

    def test_1d_endpoint_halving(self):
        c = build_tensor_grid([(0.0, 1.0)], (11,))
        w = quadrature_weights(c)
        assert_allclose(w[0], 0.05)
        assert_allclose(w[5], 0.1)
        assert_allclose(w.sum(), 1.0, rtol=1e-14)

    def test_linear_exactness_2d(self):
        c = build_tensor_grid([(0.0, 1.0), (0.0, 2.0)], (6, 9))
        w = quadrature_weights(c)
        f = 2.0 * c.coords[:, 0] + 0.5 * c.coords[:, 1]
        # integral of 2x + z/2 over [0,1]x[0,2]
        assert_allclose(np.sum(w * f), 3.0, rtol=1e-13)


class TestStencilSelection:

    def test_matches_brute_force_on_grid(self):
        c = build_tensor_grid([(0.0, 1.0), (0.0, 1.0)], (7, 9))
        for n_s in (1, 3, 5, 8):
            assert_allclose(build_stencils(c.coords, n_s), brute_stencils(c.coords, n_s))

    def test_tie_break_prefers_low_index(self):
        # square grid: the four axis neighbors tie at distance h
        c = build_tensor_grid([(0.0, 1.0), (0.0, 1.0)], (5, 5))
        i = 12  # center node (2, 2)
        st5 = build_stencils(c.coords, 4)[i]
        # self first, then ties in index order: 7 (x low), 11 (z low), 13 (z high)
        assert st5.tolist() == [12, 7, 11, 13]

    def test_anisotropic_grid_degenerates_to_line(self):
        # hx = 4 hz: pure nearest picks a vertical line, no x neighbors
        c = build_tensor_grid([(0.0, 0.8), (0.0, 0.4)], (5, 9))
        i = 2 * 9 + 4
        sel = set(build_stencils(c.coords, 5)[i].tolist())
        assert sel == {i, i - 1, i + 1, i - 2, i + 2}

    def test_operator_stencils_keep_axis_cross(self):
        c = build_tensor_grid([(0.0, 0.8), (0.0, 0.4)], (5, 9))
        i = 2 * 9 + 4
        row = operator_stencils(c, 5)[i]
        assert row.tolist() == [i, i - 9, i + 9, i - 1, i + 1]

    def test_operator_stencils_boundary_normal_line(self):
        c1 = build_tensor_grid([(0.0, 1.0)], (11,))
        rows = operator_stencils(c1, 3)
        assert rows[10].tolist() == [10, 9, 8]
        assert rows[0].tolist() == [0, 1, 2]
        assert rows[5].tolist() == [5, 4, 6]

        c2 = build_tensor_grid([(0.0, 1.0), (0.0, 1.0)], (5, 5))
        row = operator_stencils(c2, 5)[14]  # (2, 4) on the top face
        assert row[:3].tolist() == [14, 13, 12]
        assert set(row[3:].tolist()) == {9, 19}

    def test_operator_stencils_need_two_inward_nodes(self):
        c = build_tensor_grid([(0.0, 1.0), (0.0, 1.0)], (2, 5))
        with pytest.raises(ValueError, match="two inward nodes"):
            operator_stencils(c, 5)

    def test_stencil_size_bounds(self):
        c = build_tensor_grid([(0.0, 1.0)], (4,))
        with pytest.raises(ValueError):
            build_stencils(c.coords, 0)
        with pytest.raises(ValueError):
            build_stencils(c.coords, 5)

    def test_duplicate_points_are_deterministic(self):
        pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        assert_allclose(build_stencils(pts, 3), brute_stencils(pts, 3))


@st.composite
def point_sets(draw):
    n = draw(st.integers(3, 24))
    dim = draw(st.integers(1, 2))
    # lattice coordinates force plenty of exact distance ties
    pts = draw(st.lists(
        st.tuples(*[st.integers(-4, 4) for _ in range(dim)]),
        min_size=n, max_size=n))
    return np.asarray(pts, dtype=float) * 0.25


class TestStencilProperties:

    @settings(max_examples=120, deadline=None)
    @given(point_sets(), st.integers(1, 6))
    def test_always_matches_brute_force(self, pts, n_s):
        n_s = min(n_s, len(pts))
        assert_allclose(build_stencils(pts, n_s), brute_stencils(pts, n_s))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(4, 9), st.integers(4, 9))
    def test_interior_cross_always_present_on_grids(self, nx, nz):
        c = build_tensor_grid([(0.0, 1.0), (0.0, 1.3)], (nx, nz))
        rows = operator_stencils(c, 5)
        interior = ~c.is_boundary
        nbrs = c.axis_neighbors.reshape(c.n, 4)
        for i in np.flatnonzero(interior):
            assert set(nbrs[i]) | {i} <= set(rows[i].tolist())
