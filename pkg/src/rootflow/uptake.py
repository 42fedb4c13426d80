"""Plant root water uptake: stress response, root density and sink terms.

The macroscopic sink follows the classical breakpoint stress-response model:
uptake is zero near saturation (anaerobiosis) and beyond the wilting point,
full between, with linear ramps in the two transition bands. The head at
which stress onset occurs shifts linearly with transpiration demand between
a low-demand and a high-demand anchor.

Simplified depth-only sinks (stepwise and exponential extinction profiles)
are provided for benchmark columns without a stress response.

Units: heads in m, rates in m/h, depths in m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FeddesParams",
    "RootDistribution",
    "SimplifiedSink",
    "interpolate_psi3",
    "feddes_alpha",
    "feddes_sink",
    "simplified_sink",
    "root_density",
    "actual_transpiration",
]


@dataclass(frozen=True)
class FeddesParams:
    """Breakpoint heads [m] and the demand anchors for the stress-onset head.

    psi1 >= psi2 >= psi3_low >= psi3_high > psi4; uptake is zero at
    psi >= psi1 and psi <= psi4. r2_low < r2_high are the transpiration
    rates [m/h] anchoring the stress-onset interpolation.
    """

    psi1: float
    psi2: float
    psi3_low: float
    psi3_high: float
    psi4: float
    r2_low: float
    r2_high: float

    def __post_init__(self):
        if not (self.psi1 >= self.psi2 >= self.psi3_low >= self.psi3_high > self.psi4):
            raise ValueError(
                "breakpoints must satisfy psi1 >= psi2 >= psi3_low >= psi3_high > psi4, got "
                f"{self.psi1}, {self.psi2}, {self.psi3_low}, {self.psi3_high}, {self.psi4}"
            )
        if not 0.0 <= self.r2_low < self.r2_high:
            raise ValueError(f"need 0 <= r2_low < r2_high, got {self.r2_low}, {self.r2_high}")


def interpolate_psi3(params: FeddesParams, tp: float) -> float:
    """Stress-onset head for transpiration demand tp [m/h].

    Straight line through (r2_low, psi3_low) and (r2_high, psi3_high),
    clamped to the anchor values outside that demand range.
    """
    if tp <= params.r2_low:
        return params.psi3_low
    if tp >= params.r2_high:
        return params.psi3_high
    frac = (tp - params.r2_low) / (params.r2_high - params.r2_low)
    return params.psi3_low + frac * (params.psi3_high - params.psi3_low)


def feddes_alpha(params: FeddesParams, psi, psi3: float):
    """Dimensionless stress response in [0, 1] for pressure head psi [m]."""
    psi = np.asarray(psi, dtype=float)
    p1, p2, p4 = params.psi1, params.psi2, params.psi4
    if not p2 >= psi3 >= p4:
        raise ValueError(f"psi3={psi3} outside [{p4}, {p2}]")

    with np.errstate(divide="ignore", invalid="ignore"):
        upper = np.where(p1 > p2, (psi - p1) / (p2 - p1), 1.0)
        lower = np.where(psi3 > p4, (psi - p4) / (psi3 - p4), 1.0)
    out = np.select(
        [psi >= p1, psi >= p2, psi > psi3, psi > p4],
        [0.0, upper, 1.0, lower],
        default=0.0,
    )
    # ramps are in [0, 1] exactly; clip only guards last-ulp rounding
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RootDistribution:
    """Root density shape over depth below the soil surface.

    kind   : 'uniform' | 'linear' | 'tabulated'
    depth  : rooting depth [m], measured down from the surface
    table  : (depth_points [m], raw densities) for the tabulated kind;
             linearly interpolated, zero past the last point
    """

    kind: str
    depth: float
    table: tuple = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in ("uniform", "linear", "tabulated"):
            raise ValueError(f"unknown root distribution kind {self.kind!r}")
        if self.depth <= 0.0:
            raise ValueError(f"rooting depth must be positive, got {self.depth}")
        if self.kind == "tabulated":
            if self.table is None:
                raise ValueError("tabulated distribution needs a table")
            d, v = np.asarray(self.table[0], float), np.asarray(self.table[1], float)
            if d.shape != v.shape or d.ndim != 1 or len(d) < 2:
                raise ValueError("table must be two equal-length 1-d sequences")
            if np.any(np.diff(d) <= 0) or np.any(v < 0):
                raise ValueError("table depths must increase and densities be nonnegative")


def root_density(dist: RootDistribution, z, z_top: float, weights) -> np.ndarray:
    """Nodal root density b [1/m (1-D) or 1/m^2 (2-D)] normalized on the grid.

    z is the vertical coordinate (positive up), z_top the soil surface.
    Rescaled so that sum(weights * b) == 1 exactly for the quadrature
    weights actually used by the transpiration integrals; nodes on the
    root-zone boundary count as inside.
    """
    z = np.asarray(z, dtype=float)
    depth = z_top - z
    inside = depth <= dist.depth
    if dist.kind == "uniform":
        raw = np.where(inside, 1.0, 0.0)
    elif dist.kind == "linear":
        raw = np.where(inside, np.maximum(1.0 - depth / dist.depth, 0.0), 0.0)
    else:
        d, v = np.asarray(dist.table[0], float), np.asarray(dist.table[1], float)
        raw = np.where(inside, np.interp(depth, d, v, right=0.0), 0.0)
    total = float(np.sum(np.asarray(weights, float) * raw))
    if total <= 0.0:
        raise ValueError("root distribution integrates to zero on this grid")
    return raw / total


def feddes_sink(params: FeddesParams, tp: float, b, psi, psi3: float = None):
    """Sink field s = alpha(psi) * b * tp [1/h]; zero outside the root zone via b."""
    if psi3 is None:
        psi3 = interpolate_psi3(params, tp)
    return feddes_alpha(params, psi, psi3) * np.asarray(b, float) * tp


@dataclass(frozen=True)
class SimplifiedSink:
    """Depth-only extraction profile without a stress response.

    kind = 'stepwise':    R0 [1/h] on l1 <= z <= l, zero below l1
    kind = 'exponential': R0 * exp(beta (z - L)), beta [1/m], over the column
    """

    kind: str
    R0: float
    l1: float = 0.0
    l: float = 0.0
    beta: float = 0.0
    L: float = 0.0

    def __post_init__(self):
        if self.kind not in ("stepwise", "exponential"):
            raise ValueError(f"unknown simplified sink kind {self.kind!r}")
        if self.R0 < 0.0:
            raise ValueError(f"R0 must be nonnegative, got {self.R0}")
        if self.kind == "stepwise" and not 0.0 <= self.l1 <= self.l:
            raise ValueError(f"need 0 <= l1 <= l, got l1={self.l1}, l={self.l}")
        if self.kind == "exponential" and self.beta <= 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")


def simplified_sink(sink: SimplifiedSink, z) -> np.ndarray:
    """Evaluate the extraction profile [1/h] at heights z [m]."""
    z = np.asarray(z, dtype=float)
    if sink.kind == "stepwise":
        return np.where((z >= sink.l1) & (z <= sink.l), sink.R0, 0.0)
    return sink.R0 * np.exp(sink.beta * (z - sink.L))


def actual_transpiration(tp: float, alpha, b, weights) -> float:
    """Actual transpiration Ta = tp * integral(alpha * b) [m/h]."""
    return tp * float(np.sum(np.asarray(weights, float) * np.asarray(alpha, float) * np.asarray(b, float)))
