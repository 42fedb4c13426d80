"""Tensor-product node clouds, boundary segmentation and nearest-node stencils.

Nodes live on a uniform tensor grid in 1, 2 or 3 dimensions. The last
coordinate column is the vertical axis z, positive up. Flat node indices
are C-ordered with z fastest: for 2-D, i = ix * Nz + iz.

Boundary faces are named by side: bottom/top for z, left/right for x,
front/back for y. A corner node is assigned one primary face with the
vertical faces taking priority over x, then y, but geometric membership
in every face it touches is kept so that boundary rows can be composed
per axis at corners.

Named boundary segments partition each face, optionally restricted to a
range of the first tangential coordinate. Matching is first wins in the
order given, so an inclusive split like x <= 0.5 / x >= 0.5 puts the
shared node in the segment listed first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "BoundarySegment",
    "NodeCloud",
    "build_tensor_grid",
    "quadrature_weights",
    "build_stencils",
    "operator_stencils",
]

_FACE_NAMES = {
    1: ("bottom", "top"),
    2: ("left", "right", "bottom", "top"),
    3: ("left", "right", "front", "back", "bottom", "top"),
}

_BC_KINDS = ("dirichlet", "neumann")


@dataclass(frozen=True)
class BoundarySegment:
    """Named piece of a boundary face.

    face    : face name, e.g. 'top'
    kind    : 'dirichlet' or 'neumann'
    x_range : inclusive (lo, hi) over the first tangential coordinate,
              None for the whole face
    """

    name: str
    face: str
    kind: str
    x_range: tuple = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in _BC_KINDS:
            raise ValueError(f"segment kind must be one of {_BC_KINDS}, got {self.kind!r}")
        if self.x_range is not None:
            lo, hi = self.x_range
            if not lo <= hi:
                raise ValueError(f"x_range must be ordered, got {self.x_range}")


@dataclass(eq=False)
class NodeCloud:
    """Uniform tensor grid with boundary metadata.

    coords         : (N, d) node positions [m], z last
    spacing        : (d,) grid step per axis [m]
    counts         : (d,) nodes per axis
    extents        : ((lo, hi), ...) per axis [m]
    face_id        : (N,) primary face index, -1 for interior nodes
    segment_id     : (N,) segment index on the primary face, -1 interior
    segments       : tuple of BoundarySegment
    axis_neighbors : (N, d, 2) flat indices of the (low, high) grid
                     neighbor per axis, -1 where the node is on the wall
    seg_of_face    : (N, 2d) segment index for every face the node
                     geometrically touches, -1 elsewhere
    """

    coords: np.ndarray
    spacing: np.ndarray
    counts: np.ndarray
    extents: tuple
    face_id: np.ndarray
    segment_id: np.ndarray
    segments: tuple
    axis_neighbors: np.ndarray
    seg_of_face: np.ndarray

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def face_names(self) -> tuple:
        return _FACE_NAMES[self.dim]

    @property
    def is_boundary(self) -> np.ndarray:
        return self.face_id >= 0

    def face_index(self, name: str) -> int:
        return self.face_names.index(name)

    def face_axis_side(self, face: int) -> tuple:
        """Map face index to (coords axis, side) with side 0 low, 1 high."""
        return face // 2, face % 2

    def outward_normal(self, face: int) -> np.ndarray:
        axis, side = self.face_axis_side(face)
        nvec = np.zeros(self.dim)
        nvec[axis] = 1.0 if side else -1.0
        return nvec

    def segment_nodes(self, name: str) -> np.ndarray:
        """Flat indices of nodes whose primary segment has this name."""
        sid = [s.name for s in self.segments].index(name)
        return np.flatnonzero(self.segment_id == sid)


def _range_coordinate(dim: int, axis: int) -> int:
    """Tangential coordinate column used by x_range on faces of this axis."""
    for c in range(dim):
        if c != axis:
            return c
    return -1


def build_tensor_grid(extents, counts, segments=None) -> NodeCloud:
    """Build a uniform grid cloud with boundary segments.

    extents  : ((lo, hi), ...) per axis, z last
    counts   : nodes per axis, each >= 2
    segments : ordered BoundarySegment list; every boundary face must be
               fully covered (first matching segment wins). None gives
               one whole-face dirichlet segment per face, a convenience
               for tests and geometry-only use.
    """
    counts = np.asarray(counts, dtype=np.int64)
    dim = len(counts)
    if dim not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")
    if len(extents) != dim:
        raise ValueError("extents and counts disagree on dimension")
    if np.any(counts < 2):
        raise ValueError(f"need at least 2 nodes per axis, got {counts.tolist()}")
    extents = tuple((float(lo), float(hi)) for lo, hi in extents)
    for lo, hi in extents:
        if not lo < hi:
            raise ValueError(f"empty extent ({lo}, {hi})")

    axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(extents, counts)]
    spacing = np.array([(hi - lo) / (c - 1) for (lo, hi), c in zip(extents, counts)])
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)
    n = coords.shape[0]

    multi = [ix.ravel() for ix in np.indices(counts)]
    strides = np.array([int(np.prod(counts[a + 1:])) for a in range(dim)], dtype=np.int64)

    axis_neighbors = np.full((n, dim, 2), -1, dtype=np.int32)
    flat = np.arange(n, dtype=np.int64)
    for a in range(dim):
        has_lo = multi[a] > 0
        has_hi = multi[a] < counts[a] - 1
        axis_neighbors[has_lo, a, 0] = flat[has_lo] - strides[a]
        axis_neighbors[has_hi, a, 1] = flat[has_hi] + strides[a]

    on_face = np.zeros((n, 2 * dim), dtype=bool)
    for a in range(dim):
        on_face[:, 2 * a] = multi[a] == 0
        on_face[:, 2 * a + 1] = multi[a] == counts[a] - 1

    face_names = _FACE_NAMES[dim]
    face_id = np.full(n, -1, dtype=np.int32)
    priority_axes = [dim - 1] + list(range(dim - 1))  # vertical first, then x, y
    for a in priority_axes:
        for side in (0, 1):
            f = 2 * a + side
            face_id[on_face[:, f] & (face_id < 0)] = f

    if segments is None:
        segments = [BoundarySegment(name, name, "dirichlet") for name in face_names]
    segments = tuple(segments)
    names = [s.name for s in segments]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate segment names in {names}")
    for s in segments:
        if s.face not in face_names:
            raise ValueError(f"segment {s.name!r} names unknown face {s.face!r}")

    seg_of_face = np.full((n, 2 * dim), -1, dtype=np.int32)
    for sid, seg in enumerate(segments):
        f = face_names.index(seg.face)
        sel = on_face[:, f] & (seg_of_face[:, f] < 0)
        if seg.x_range is not None:
            rc = _range_coordinate(dim, f // 2)
            if rc >= 0:
                lo, hi = seg.x_range
                sel &= (coords[:, rc] >= lo) & (coords[:, rc] <= hi)
        if not np.any(sel):
            raise ValueError(f"segment {seg.name!r} matches no nodes")
        seg_of_face[sel, f] = sid

    uncovered = on_face & (seg_of_face < 0)
    if np.any(uncovered):
        i, f = np.argwhere(uncovered)[0]
        raise ValueError(
            f"boundary face {face_names[f]!r} not fully covered by segments, "
            f"first gap at node {i} {coords[i].tolist()}"
        )

    segment_id = np.full(n, -1, dtype=np.int32)
    bnd = face_id >= 0
    segment_id[bnd] = seg_of_face[bnd, face_id[bnd]]

    return NodeCloud(
        coords=coords,
        spacing=spacing,
        counts=counts,
        extents=extents,
        face_id=face_id,
        segment_id=segment_id,
        segments=segments,
        axis_neighbors=axis_neighbors,
        seg_of_face=seg_of_face,
    )


def quadrature_weights(cloud: NodeCloud) -> np.ndarray:
    """Tensor-product trapezoid weights, one per node [m^d]."""
    per_axis = []
    for a in range(cloud.dim):
        w = np.full(cloud.counts[a], cloud.spacing[a])
        w[0] *= 0.5
        w[-1] *= 0.5
        per_axis.append(w)
    grids = np.meshgrid(*per_axis, indexing="ij")
    return np.prod(grids, axis=0).ravel()


def _exact_sq_dist(coords, centers, idx):
    diff = coords[idx] - centers[:, None, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def build_stencils(coords, n_s: int) -> np.ndarray:
    """Indices of the n_s nearest nodes to each node, the node included.

    Ordered by squared distance with the node index breaking ties, so the
    result is deterministic and matches a brute-force sort exactly.
    """
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    if not 1 <= n_s <= n:
        raise ValueError(f"stencil size {n_s} not in [1, {n}]")

    tree = cKDTree(coords)
    k0 = min(n, n_s + 8)
    _, idx = tree.query(coords, k=k0)
    idx = idx.reshape(n, k0)
    d2 = _exact_sq_dist(coords, coords, idx)

    rows = np.repeat(np.arange(n), k0)
    order = np.lexsort((idx.ravel(), d2.ravel(), rows)).reshape(n, k0)
    order -= (np.arange(n) * k0)[:, None]
    d2s = np.take_along_axis(d2, order, axis=1)
    idxs = np.take_along_axis(idx, order, axis=1)
    out = idxs[:, :n_s].astype(np.int32)

    # candidate window may cut through a tie; redo those rows on the full ball
    cut = d2s[:, n_s - 1]
    suspect = np.zeros(n, dtype=bool)
    if k0 > n_s:
        suspect |= d2s[:, n_s] <= cut
    if k0 < n:
        suspect |= d2s[:, -1] <= cut * (1.0 + 1e-12)
    for i in np.flatnonzero(suspect):
        cand = np.array(tree.query_ball_point(coords[i], np.sqrt(cut[i]) * (1.0 + 1e-12)))
        dd = np.sum((coords[cand] - coords[i]) ** 2, axis=1)
        keep = np.lexsort((cand, dd))[:n_s]
        out[i] = cand[keep].astype(np.int32)
    return out


def _fill_nearest(coords, tree, i, required, m):
    """Stencil row for node i: required indices first, then nearest others."""
    need = m - len(required)
    k = min(len(coords), m + len(required) + 8)
    while True:
        _, cand = tree.query(coords[i], k=k)
        cand = np.atleast_1d(cand)
        extra = cand[~np.isin(cand, required)]
        if len(extra) >= need or k == len(coords):
            break
        k = min(len(coords), 2 * k)
    dd = np.sum((coords[extra] - coords[i]) ** 2, axis=1)
    take = extra[np.lexsort((extra, dd))[:need]]
    return np.concatenate([required, take])


def operator_stencils(cloud: NodeCloud, n_s: int) -> np.ndarray:
    """Stencils sized max(n_s, 2d+1) with the supports the rows need.

    Interior nodes always carry the full axis cross (center plus both
    grid neighbors per axis); pure nearest selection can drop part of it
    on anisotropic grids. Boundary nodes carry the first and second
    inward nodes along their primary face normal, which the one-sided
    derivative rows require.
    """
    dim = cloud.dim
    m = max(n_s, 2 * dim + 1)
    n = cloud.n
    if m > n:
        raise ValueError(f"stencil size {m} exceeds node count {n}")
    coords = cloud.coords
    out = np.empty((n, m), dtype=np.int32)

    interior = ~cloud.is_boundary
    cross = np.concatenate(
        [np.arange(n, dtype=np.int32)[:, None],
         cloud.axis_neighbors.reshape(n, 2 * dim)], axis=1)
    if np.any(cross[interior] < 0):
        raise ValueError("interior node misses an axis neighbor")

    tree = cKDTree(coords)
    if m == 2 * dim + 1:
        out[interior] = cross[interior]
    else:
        for i in np.flatnonzero(interior):
            out[i] = _fill_nearest(coords, tree, i, cross[i], m)

    for i in np.flatnonzero(cloud.is_boundary):
        axis, side = cloud.face_axis_side(int(cloud.face_id[i]))
        inward = 1 - side
        in1 = cloud.axis_neighbors[i, axis, inward]
        in2 = cloud.axis_neighbors[in1, axis, inward] if in1 >= 0 else -1
        if in1 < 0 or in2 < 0:
            raise ValueError(
                f"node {i} needs two inward nodes along axis {axis}; grid too small"
            )
        out[i] = _fill_nearest(coords, tree, i, np.array([i, in1, in2], dtype=np.int64), m)
    return out
