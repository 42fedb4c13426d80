"""Gaussian-kernel collocation operators on local stencils.

The divergence term is discretized per axis with interface-averaged
conductivities,

    (L f)_i = sum_a [ K_{i+1/2,a} (f_hi - f_i) - K_{i-1/2,a} (f_i - f_lo) ] / h_a^2,

a functional supported on the node and its axis neighbors. Whenever those
nodes sit inside the kernel stencil, the kernel-generated weights coincide
with these coefficients identically, for every shape parameter, because the
functional is already a combination of point values on the stencil. Interior
rows are therefore emitted algebraically; the linear-solve route is kept for
verification and as a fallback on irregular stencils.

Boundary flux rows need a genuine derivative functional. Their weights
solve Phi lam = g with g_k = grad phi_k . n at the wall node; that system
inherits the kernel's flat-limit conditioning (growing like (eps h)^-4),
so the rows are computed once per run in 50-digit arithmetic and cached.
"""

from __future__ import annotations

from dataclasses import dataclass

import mpmath as mp
import numpy as np

from .cloud import NodeCloud

__all__ = [
    "GaussianRbf",
    "StencilFactorizationError",
    "interpolation_matrix",
    "cholesky_stencils",
    "functional_weights",
    "interface_weights",
    "apply_interface_operator",
    "interface_functional_values",
    "gravity_column_difference",
    "normal_derivative_rows",
]


@dataclass(frozen=True)
class GaussianRbf:
    """Kernel phi(r) = exp(-(eps r)^2), evaluated on squared distances."""

    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError(f"shape parameter must be positive, got {self.epsilon}")

    def __call__(self, r2):
        return np.exp(-(self.epsilon ** 2) * np.asarray(r2, dtype=float))

    def gradient(self, x, centers):
        """Rows grad phi_k(x), one per center, shape (m, d)."""
        x = np.asarray(x, dtype=float)
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        diff = x[None, :] - centers
        r2 = np.sum(diff * diff, axis=1)
        return -2.0 * self.epsilon ** 2 * diff * self(r2)[:, None]


class StencilFactorizationError(RuntimeError):
    """A local kernel matrix failed its positive-definite factorization."""


def _pairwise_sq_dists(pts):
    pts = np.asarray(pts, dtype=float)
    sq = np.sum(pts * pts, axis=-1)
    r2 = sq[..., :, None] + sq[..., None, :] - 2.0 * (pts @ np.swapaxes(pts, -1, -2))
    return np.maximum(r2, 0.0)


def interpolation_matrix(rbf: GaussianRbf, pts) -> np.ndarray:
    """Symmetric kernel matrix Phi_ij = phi(|x_i - x_j|)."""
    return rbf(_pairwise_sq_dists(np.atleast_2d(pts)))


def cholesky_stencils(rbf: GaussianRbf, coords, stencils) -> np.ndarray:
    """Lower Cholesky factor of every stencil's kernel matrix, batched.

    Raises StencilFactorizationError naming the first offending stencil if
    any matrix is not numerically positive definite (duplicate nodes, or a
    shape parameter small enough to exhaust double precision).
    """
    pts = np.asarray(coords, dtype=float)[np.asarray(stencils)]
    phi = rbf(_pairwise_sq_dists(pts))
    try:
        return np.linalg.cholesky(phi)
    except np.linalg.LinAlgError:
        for i in range(phi.shape[0]):
            try:
                np.linalg.cholesky(phi[i])
            except np.linalg.LinAlgError:
                raise StencilFactorizationError(
                    f"kernel matrix for stencil {i} is not positive definite; "
                    f"nodes {np.asarray(stencils)[i].tolist()}"
                ) from None
        raise


def functional_weights(rbf: GaussianRbf, pts, theta) -> np.ndarray:
    """Collocation weights lam solving Phi lam = theta on one stencil."""
    phi = interpolation_matrix(rbf, pts)
    return np.linalg.solve(phi, np.asarray(theta, dtype=float))


def interface_weights(cloud: NodeCloud, K):
    """Algebraic divergence-row coefficients from nodal conductivities.

    Returns (center, side) with center (N,) and side (N, d, 2); side holds
    K_{i +/- 1/2, a} / h_a^2 toward the (low, high) neighbor and is zero
    where the neighbor is missing, so boundary rows can reuse the same
    interface averages for their half cells.
    """
    K = np.asarray(K, dtype=float)
    nbr = cloud.axis_neighbors
    valid = nbr >= 0
    Knbr = np.where(valid, K[np.where(valid, nbr, 0)], 0.0)
    half = 0.5 * (K[:, None, None] + Knbr)
    side = np.where(valid, half / (cloud.spacing[None, :, None] ** 2), 0.0)
    center = -np.sum(side, axis=(1, 2))
    return center, side


def apply_interface_operator(cloud: NodeCloud, K, f) -> np.ndarray:
    """Evaluate the divergence rows at every node with full axis support.

    Nodes missing a neighbor (walls) get the partial sum over existing
    sides; callers treat those through their boundary rows instead.
    """
    f = np.asarray(f, dtype=float)
    _, side = interface_weights(cloud, K)
    nbr = cloud.axis_neighbors
    fnbr = f[np.where(nbr >= 0, nbr, 0)]
    # side is zero where the neighbor is missing, masking the dummy gather
    return np.sum(side * (fnbr - f[:, None, None]), axis=(1, 2))


def interface_functional_values(rbf: GaussianRbf, pts, weights) -> np.ndarray:
    """theta_k = functional applied to each kernel basis function.

    For a point-value functional sum_j w_j f(x_j), theta = Phi w; feeding
    this back through functional_weights must return w.
    """
    return interpolation_matrix(rbf, pts) @ np.asarray(weights, dtype=float)


def gravity_column_difference(cloud: NodeCloud, K) -> np.ndarray:
    """Centered vertical difference (K_up - K_down) / (2 h_z), zero at walls."""
    K = np.asarray(K, dtype=float)
    a = cloud.dim - 1
    nbr = cloud.axis_neighbors[:, a, :]
    ok = np.all(nbr >= 0, axis=1)
    out = np.zeros(cloud.n)
    out[ok] = (K[nbr[ok, 1]] - K[nbr[ok, 0]]) / (2.0 * cloud.spacing[a])
    return out


def normal_derivative_rows(epsilon: float, coords, stencils, nodes, normals) -> np.ndarray:
    """Outward-normal derivative weights for wall nodes, in high precision.

    nodes   : flat indices of the wall nodes
    normals : (len(nodes), d) outward unit normals
    Row j applies to coords[stencils[nodes[j]]]; the wall node itself must
    be the first stencil entry. Solved at 50 decimal digits because the
    kernel matrix condition number grows like (eps h)^-4 in the flat limit.
    """
    coords = np.asarray(coords, dtype=float)
    stencils = np.asarray(stencils)
    nodes = np.asarray(nodes)
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    m = stencils.shape[1]
    rows = np.empty((len(nodes), m))

    old_dps = mp.mp.dps
    mp.mp.dps = 50
    try:
        e2 = mp.mpf(float(epsilon)) ** 2
        for j, i in enumerate(nodes):
            st = stencils[i]
            if st[0] != i:
                raise ValueError(f"stencil of node {i} must start with the node itself")
            pts = [[mp.mpf(float(c)) for c in coords[k]] for k in st]
            phi = mp.matrix(m, m)
            for a in range(m):
                for b in range(a, m):
                    r2 = sum((pa - pb) ** 2 for pa, pb in zip(pts[a], pts[b]))
                    phi[a, b] = phi[b, a] = mp.e ** (-e2 * r2)
            g = mp.matrix(m, 1)
            for k in range(m):
                dot = sum(
                    (pc - pk) * mp.mpf(float(nc))
                    for pc, pk, nc in zip(pts[0], pts[k], normals[j])
                )
                g[k] = -2 * e2 * dot * phi[0, k]
            lam = mp.lu_solve(phi, g)
            rows[j] = [float(lam[k]) for k in range(m)]
    finally:
        mp.mp.dps = old_dps
    return rows
