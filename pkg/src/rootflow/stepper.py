"""Implicit time stepping for the mixed-form moisture equation.

Each step solves

    (theta^{n+1} - history) / dt = div(K grad psi) + dK/dz - s(x, psi)

with a one- or two-step backward difference in time and a modified Picard
linearization in the increment delta = psi^{m+1} - psi^m:

    (sigma0 C(psi^m) / dt) delta - L(K^m) delta = L(K^m) psi^m + G(K^m)
        + F_in - (sigma0 theta^m + sigma1 theta^n + sigma2 theta^{n-1}) / dt - s^m

where (sigma0, sigma1, sigma2) is (1, -1, 0) for the one-step and
(3/2, -2, 1/2) for the two-step scheme. Iteration stops when a norm of
delta drops below tolerance; the accepted water content is re-evaluated
from the committed head so the stored state stays on the retention curve.

Wall rows come in three kinds. Dirichlet nodes carry an identity row with
the iterate preset to the boundary value, and their columns are dropped
from every other row so the increment there is exactly zero. Flux walls
either collocate the outward derivative with kernel-generated weights
(mode 'collocation') or close a conservative half cell around the node
(mode 'balance'); the half cell keeps the storage term, which stabilizes
the iteration when a large flux meets dry soil, and it preserves the
hydrostatic profile exactly. Balance rows compose per axis, so corners
where two flux walls meet need no special casing.

Prescribed flux values are outward-positive total fluxes; with
include_gravity False the value is the matric part only, which makes a
zero value on a bottom wall the usual free-drainage condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import splu

from .cloud import NodeCloud, operator_stencils
from .constitutive import conductivity, moisture_capacity, water_content
from .operators import normal_derivative_rows

__all__ = [
    "FluxConstant",
    "FluxExponential",
    "evaluate_flux",
    "DirichletBC",
    "NeumannBC",
    "PicardControls",
    "PicardNonConvergence",
    "SimulationState",
    "make_state",
    "Discretization",
    "solve_sparse",
    "bdf1_advance",
    "bdf2_advance",
    "advance_step",
    "BDF1_SIGMA",
    "BDF2_SIGMA",
]

BDF1_SIGMA = (1.0, -1.0, 0.0)
BDF2_SIGMA = (1.5, -2.0, 0.5)


@dataclass(frozen=True)
class FluxConstant:
    """Steady boundary flux [m/h]."""

    value: float

    def __call__(self, t: float) -> float:
        return self.value


@dataclass(frozen=True)
class FluxExponential:
    """q0 + delta * exp(k1 t), the relaxing-supply forcing [m/h]."""

    q0: float
    delta: float
    k1: float

    def __call__(self, t: float) -> float:
        return self.q0 + self.delta * math.exp(self.k1 * t)


def evaluate_flux(flux, t: float) -> float:
    return float(flux(t)) if callable(flux) else float(flux)


@dataclass(frozen=True)
class DirichletBC:
    segment: str
    value: float


@dataclass(frozen=True)
class NeumannBC:
    """Outward-normal flux on a segment.

    flux            : number or callable of time [m/h], positive outward
    include_gravity : True prescribes the total flux -K (grad psi + e_z).n,
                      False just the matric part -K grad psi . n
    mode            : 'collocation' or 'balance' wall rows
    """

    segment: str
    flux: object
    include_gravity: bool = True
    mode: str = "collocation"

    def __post_init__(self):
        if self.mode not in ("collocation", "balance"):
            raise ValueError(f"unknown wall row mode {self.mode!r}")


@dataclass(frozen=True)
class PicardControls:
    tol: float = 1e-6
    max_iters: int = 50
    norm: str = "max"
    initial_guess: str = "previous"

    def __post_init__(self):
        if self.norm not in ("max", "rms"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.initial_guess not in ("previous", "extrapolate"):
            raise ValueError(f"unknown initial guess {self.initial_guess!r}")
        if self.tol <= 0 or self.max_iters < 1:
            raise ValueError("need tol > 0 and max_iters >= 1")

    def delta_norm(self, delta: np.ndarray) -> float:
        if self.norm == "max":
            return float(np.max(np.abs(delta)))
        return float(np.sqrt(np.mean(delta * delta)))


class PicardNonConvergence(RuntimeError):
    def __init__(self, t, dt, iterations, delta_norm):
        super().__init__(
            f"no convergence at t={t:.6g} with dt={dt:.6g}: "
            f"|delta|={delta_norm:.3e} after {iterations} iterations"
        )
        self.t = t
        self.dt = dt
        self.iterations = iterations
        self.delta_norm = delta_norm


@dataclass
class SimulationState:
    psi: np.ndarray
    theta: np.ndarray
    psi_prev: np.ndarray
    theta_prev: np.ndarray
    t: float = 0.0
    step: int = 0

    def copy(self) -> "SimulationState":
        return SimulationState(self.psi.copy(), self.theta.copy(),
                               self.psi_prev.copy(), self.theta_prev.copy(),
                               self.t, self.step)

    def restore(self, other: "SimulationState"):
        self.psi[:] = other.psi
        self.theta[:] = other.theta
        self.psi_prev[:] = other.psi_prev
        self.theta_prev[:] = other.theta_prev
        self.t = other.t
        self.step = other.step


def make_state(soil, psi0, t0: float = 0.0) -> SimulationState:
    psi0 = np.asarray(psi0, dtype=float).copy()
    theta0 = np.asarray(water_content(soil, psi0), dtype=float)
    return SimulationState(psi0, theta0, psi0.copy(), theta0.copy(), t0, 0)


# node row kinds
_INTERIOR, _DIRICHLET, _COLLOCATION, _BALANCE = 0, 1, 2, 3


class Discretization:
    """Static arrays for assembling the linearized system on one cloud.

    Everything that does not change between iterations is precomputed:
    node row kinds, neighbor entry lists with their half-cell multipliers
    and gravity factors, wall derivative rows in high precision, and the
    sparsity pattern with its sorting permutation.
    """

    def __init__(self, cloud: NodeCloud, soil, bcs, epsilon: float, n_s: int,
                 controls: PicardControls = PicardControls()):
        self.cloud = cloud
        self.soil = soil
        self.controls = controls
        self.epsilon = float(epsilon)
        self.n_s = int(n_s)

        seg_names = [s.name for s in cloud.segments]
        by_name = {}
        for bc in bcs:
            if bc.segment not in seg_names:
                raise ValueError(f"condition references unknown segment {bc.segment!r}")
            if bc.segment in by_name:
                raise ValueError(f"segment {bc.segment!r} has two conditions")
            by_name[bc.segment] = bc
        missing = [n for n in seg_names if n not in by_name]
        if missing:
            raise ValueError(f"segments without a condition: {missing}")
        self.seg_bcs = [by_name[n] for n in seg_names]
        for seg, bc in zip(cloud.segments, self.seg_bcs):
            want = "dirichlet" if isinstance(bc, DirichletBC) else "neumann"
            if seg.kind != want:
                raise ValueError(
                    f"segment {seg.name!r} is declared {seg.kind} but got a {want} condition")

        n, dim = cloud.n, cloud.dim
        self.stencils = operator_stencils(cloud, n_s)

        kind = np.full(n, _INTERIOR, dtype=np.int8)
        dir_value = np.zeros(n)
        is_dirichlet_seg = np.array(
            [isinstance(bc, DirichletBC) for bc in self.seg_bcs], dtype=bool)
        bnd = np.flatnonzero(cloud.is_boundary)
        for i in bnd:
            touched = np.flatnonzero(cloud.seg_of_face[i] >= 0)
            segs = cloud.seg_of_face[i, touched]
            dir_faces = touched[is_dirichlet_seg[segs]]
            if len(dir_faces):
                f = cloud.face_id[i] if is_dirichlet_seg[cloud.segment_id[i]] \
                    else dir_faces[0]
                kind[i] = _DIRICHLET
                dir_value[i] = self.seg_bcs[cloud.seg_of_face[i, f]].value
            else:
                bc = self.seg_bcs[cloud.segment_id[i]]
                kind[i] = _BALANCE if bc.mode == "balance" else _COLLOCATION
        self.kind = kind
        self.dirichlet_nodes = np.flatnonzero(kind == _DIRICHLET)
        self.dirichlet_values = dir_value[self.dirichlet_nodes]
        self.colloc_nodes = np.flatnonzero(kind == _COLLOCATION)
        self.ib_nodes = np.flatnonzero((kind == _INTERIOR) | (kind == _BALANCE))

        is_dir = kind == _DIRICHLET
        nbr = cloud.axis_neighbors
        vert = dim - 1

        # neighbor entries for interior and balance rows
        rows, nbrs, flats, mults, gravs = [], [], [], [], []
        for i in self.ib_nodes:
            balance = kind[i] == _BALANCE
            for a in range(dim):
                lo, hi = nbr[i, a]
                if balance and lo < 0 and hi < 0:
                    raise ValueError(
                        f"node {i} has no neighbor along axis {a}; "
                        "grid too thin for balance rows")
                for s, j in enumerate((lo, hi)):
                    if j < 0:
                        continue
                    mult = 2.0 if balance and nbr[i, a, 1 - s] < 0 else 1.0
                    sgn = 1.0 if s == 1 else -1.0
                    rows.append(i)
                    nbrs.append(j)
                    flats.append((i * dim + a) * 2 + s)
                    mults.append(mult)
                    gravs.append(sgn * mult * cloud.spacing[a] if a == vert else 0.0)
        self.ent_row = np.asarray(rows, dtype=np.int64)
        self.ent_nbr = np.asarray(nbrs, dtype=np.int64)
        self.ent_flat = np.asarray(flats, dtype=np.int64)
        self.ent_mult = np.asarray(mults)
        self.ent_grav = np.asarray(gravs)
        self.ent_in_matrix = ~is_dir[self.ent_nbr]

        # wall faces of balance nodes, for the prescribed-flux inflow terms
        fn, fscale, fnz, fseg = [], [], [], []
        for i in self.ib_nodes:
            if kind[i] != _BALANCE:
                continue
            for f in np.flatnonzero(cloud.seg_of_face[i] >= 0):
                a, side = cloud.face_axis_side(int(f))
                fn.append(i)
                fscale.append(2.0 / cloud.spacing[a])
                fnz.append((1.0 if side else -1.0) if a == vert else 0.0)
                fseg.append(cloud.seg_of_face[i, f])
        self.wall_node = np.asarray(fn, dtype=np.int64)
        self.wall_scale = np.asarray(fscale)
        self.wall_nz = np.asarray(fnz)
        self.wall_seg = np.asarray(fseg, dtype=np.int64)

        # collocation rows: high-precision derivative weights, fixed geometry.
        # The gravity part of the flux is discretized with the same weights
        # applied to the elevation values, not the analytic direction cosine;
        # the two agree to O((eps h)^2) and only the discrete form cancels
        # exactly on a hydrostatic profile.
        cn = self.colloc_nodes
        if len(cn):
            normals = np.stack([cloud.outward_normal(int(cloud.face_id[i])) for i in cn])
            self.colloc_rows = normal_derivative_rows(
                self.epsilon, cloud.coords, self.stencils, cn, normals)
            self.colloc_seg = cloud.segment_id[cn].astype(np.int64)
            self.colloc_cols = self.stencils[cn].astype(np.int64)
            self.colloc_keep = ~is_dir[self.colloc_cols]
            self.colloc_gz = np.einsum(
                "ij,ij->i", self.colloc_rows, cloud.coords[self.colloc_cols, vert])
        else:
            m = self.stencils.shape[1]
            self.colloc_rows = np.zeros((0, m))
            self.colloc_seg = np.zeros(0, dtype=np.int64)
            self.colloc_cols = np.zeros((0, m), dtype=np.int64)
            self.colloc_keep = np.zeros((0, m), dtype=bool)
            self.colloc_gz = np.zeros(0)

        self.seg_include_gravity = np.array(
            [getattr(bc, "include_gravity", True) for bc in self.seg_bcs], dtype=bool)

        # static sparsity pattern: ib diagonals, kept neighbor entries,
        # kept collocation entries, dirichlet identity rows
        pat_rows = np.concatenate([
            self.ib_nodes,
            self.ent_row[self.ent_in_matrix],
            np.repeat(cn, self.colloc_cols.shape[1])[self.colloc_keep.ravel()],
            self.dirichlet_nodes,
        ])
        pat_cols = np.concatenate([
            self.ib_nodes,
            self.ent_nbr[self.ent_in_matrix],
            self.colloc_cols.ravel()[self.colloc_keep.ravel()],
            self.dirichlet_nodes,
        ])
        self._perm = np.lexsort((pat_cols, pat_rows))
        self._indices = pat_cols[self._perm].astype(np.int32)
        counts = np.bincount(pat_rows, minlength=n)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self._nnz = len(pat_rows)

    def fields(self, psi):
        """Constitutive closures at the current iterate."""
        return (np.asarray(water_content(self.soil, psi)),
                np.asarray(conductivity(self.soil, psi)),
                np.asarray(moisture_capacity(self.soil, psi)))

    def assemble(self, psi_m, theta_m, K_m, C_m, hist_over_dt, sink,
                 dt: float, sigma0: float, t: float):
        """Matrix and right side of the increment system at iterate psi_m.

        hist_over_dt is (sigma1 theta^n + sigma2 theta^{n-1}) / dt; sink is
        the extraction field s^m, already evaluated at psi_m.
        """
        cloud = self.cloud
        n, dim = cloud.n, cloud.dim
        nbr_valid = cloud.axis_neighbors >= 0
        safe = np.where(nbr_valid, cloud.axis_neighbors, 0)
        K_nbr = np.where(nbr_valid, K_m[safe], 0.0)
        side = np.where(nbr_valid,
                        0.5 * (K_m[:, None, None] + K_nbr)
                        / (cloud.spacing[None, :, None] ** 2), 0.0)
        side_g = side.reshape(-1)[self.ent_flat]

        flux_vals = np.array([
            0.0 if isinstance(bc, DirichletBC) else evaluate_flux(bc.flux, t)
            for bc in self.seg_bcs])

        rhs = np.zeros(n)
        np.add.at(rhs, self.ent_row,
                  side_g * (self.ent_mult * (psi_m[self.ent_nbr] - psi_m[self.ent_row])
                            + self.ent_grav))
        if len(self.wall_node):
            q = flux_vals[self.wall_seg]
            grav = self.seg_include_gravity[self.wall_seg]
            f_in = np.where(grav, -q, -q + K_m[self.wall_node] * self.wall_nz)
            np.add.at(rhs, self.wall_node, self.wall_scale * f_in)
        ib = self.ib_nodes
        rhs[ib] -= (sigma0 * theta_m[ib] / dt + hist_over_dt[ib]) + sink[ib]

        diag_full = np.zeros(n)
        diag_full[ib] = sigma0 * C_m[ib] / dt
        np.add.at(diag_full, self.ent_row, self.ent_mult * side_g)

        cn = self.colloc_nodes
        if len(cn):
            Kc = K_m[cn]
            Dpsi = np.einsum("ij,ij->i", self.colloc_rows, psi_m[self.colloc_cols])
            grav = self.seg_include_gravity[self.colloc_seg]
            rhs[cn] = flux_vals[self.colloc_seg] + Kc * (
                Dpsi + np.where(grav, self.colloc_gz, 0.0))
            colloc_vals = (-Kc[:, None] * self.colloc_rows).ravel()[self.colloc_keep.ravel()]
        else:
            colloc_vals = np.zeros(0)

        rhs[self.dirichlet_nodes] = 0.0

        data = np.concatenate([
            diag_full[ib],
            -self.ent_mult[self.ent_in_matrix] * side_g[self.ent_in_matrix],
            colloc_vals,
            np.ones(len(self.dirichlet_nodes)),
        ])
        A = csr_matrix((data[self._perm], self._indices, self._indptr), shape=(n, n))
        return A, rhs


def solve_sparse(A, b) -> np.ndarray:
    """Direct sparse solve with a residual check.

    Raises RuntimeError when the factorization reports a singular matrix or
    the backward residual exceeds 1e-10 (|A| |x| + |b|) in the max norm.
    """
    try:
        lu = splu(A.tocsc())
    except RuntimeError as err:
        raise RuntimeError(
            f"sparse factorization failed on {A.shape[0]}x{A.shape[1]} "
            f"system with {A.nnz} entries: {err}") from None
    x = lu.solve(b)
    resid = np.max(np.abs(A @ x - b)) if len(b) else 0.0
    scale = np.max(np.abs(A).sum(axis=1)) * np.max(np.abs(x), initial=0.0) \
        + np.max(np.abs(b), initial=0.0)
    if not np.isfinite(resid) or resid > 1e-10 * scale:
        raise RuntimeError(
            f"sparse solve residual {resid:.3e} exceeds 1e-10 * {scale:.3e}")
    return x


def _initial_guess(disc: Discretization, state: SimulationState) -> np.ndarray:
    if disc.controls.initial_guess == "extrapolate" and state.step >= 1:
        return 2.0 * state.psi - state.psi_prev
    return state.psi.copy()


def picard_solve(disc: Discretization, state: SimulationState, dt: float,
                 sigma, sink_fn=None):
    """Iterate one implicit step; returns (psi_new, iterations, |delta|)."""
    sigma0, sigma1, sigma2 = sigma
    t_new = state.t + dt
    hist_over_dt = (sigma1 * state.theta + sigma2 * state.theta_prev) / dt

    psi_m = _initial_guess(disc, state)
    psi_m[disc.dirichlet_nodes] = disc.dirichlet_values
    controls = disc.controls
    zero_sink = np.zeros(disc.cloud.n)
    for it in range(1, controls.max_iters + 1):
        theta_m, K_m, C_m = disc.fields(psi_m)
        sink = np.asarray(sink_fn(t_new, psi_m)) if sink_fn is not None else zero_sink
        A, rhs = disc.assemble(psi_m, theta_m, K_m, C_m, hist_over_dt,
                               sink, dt, sigma0, t_new)
        delta = solve_sparse(A, rhs)
        psi_m += delta
        dn = controls.delta_norm(delta)
        if not np.isfinite(dn):
            raise PicardNonConvergence(t_new, dt, it, dn)
        if dn <= controls.tol:
            return psi_m, it, dn
    raise PicardNonConvergence(t_new, dt, controls.max_iters, dn)


def _commit(disc, state, psi_new, dt):
    state.psi_prev = state.psi
    state.theta_prev = state.theta
    state.psi = psi_new
    state.theta = np.asarray(water_content(disc.soil, psi_new))
    state.t += dt
    state.step += 1


def bdf1_advance(disc, state, dt, sink_fn=None) -> int:
    psi_new, iters, _ = picard_solve(disc, state, dt, BDF1_SIGMA, sink_fn)
    _commit(disc, state, psi_new, dt)
    return iters


def bdf2_advance(disc, state, dt, sink_fn=None) -> int:
    if state.step < 1:
        raise ValueError("two-step scheme needs one completed step of history")
    psi_new, iters, _ = picard_solve(disc, state, dt, BDF2_SIGMA, sink_fn)
    _commit(disc, state, psi_new, dt)
    return iters


def advance_step(disc, state, dt, scheme: str = "bdf2", sink_fn=None,
                 allow_substeps: bool = False, max_halvings: int = 5) -> int:
    """One step of the requested scheme, with optional rescue substeps.

    The two-step scheme starts itself with a one-step step. On divergence
    with allow_substeps, the step is retried as 2^k one-step substeps for
    k = 1..max_halvings, landing exactly on t + dt; history is then reset
    so the next two-step step sees the correct spacing.
    """
    if scheme not in ("bdf1", "bdf2"):
        raise ValueError(f"unknown scheme {scheme!r}")
    snap = state.copy() if allow_substeps else None
    try:
        if scheme == "bdf2" and state.step >= 1:
            return bdf2_advance(disc, state, dt, sink_fn)
        return bdf1_advance(disc, state, dt, sink_fn)
    except PicardNonConvergence:
        if not allow_substeps:
            raise
    for k in range(1, max_halvings + 1):
        state.restore(snap)
        parts = 2 ** k
        try:
            total = 0
            for _ in range(parts):
                total += bdf1_advance(disc, state, dt / parts, sink_fn)
        except PicardNonConvergence:
            continue
        # restore two-level history across the substituted step
        state.psi_prev = snap.psi.copy()
        state.theta_prev = snap.theta.copy()
        state.step = snap.step + 1
        state.t = snap.t + dt
        return total
    state.restore(snap)
    raise PicardNonConvergence(state.t + dt, dt, 0, float("nan"))
