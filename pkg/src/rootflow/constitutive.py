"""Soil hydraulic closures: water retention, conductivity and moisture capacity.

Two closure families are provided. The van Genuchten retention curve with the
Mualem conductivity model covers textured soils; the Gardner exponential model
gives the quasi-linear closure used for analytical benchmark columns. All
functions accept scalars or numpy arrays of pressure head psi [m] and are
evaluated with the saturated branch (psi >= 0) first so no 0**0 or divide
issues appear at the saturation point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VanGenuchtenParams",
    "GardnerParams",
    "water_content",
    "conductivity",
    "moisture_capacity",
]


@dataclass(frozen=True)
class VanGenuchtenParams:
    """van Genuchten-Mualem soil parameters.

    theta_r, theta_s : residual / saturated volumetric water content [-]
    alpha            : inverse air-entry scaling [1/m]
    n                : pore-size distribution index [-], > 1
    K_s              : saturated hydraulic conductivity [m/h]
    m                : must equal 1 - 1/n; derived when omitted
    """

    theta_r: float
    theta_s: float
    alpha: float
    n: float
    K_s: float
    m: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not 0.0 <= self.theta_r < self.theta_s <= 1.0:
            raise ValueError(f"need 0 <= theta_r < theta_s <= 1, got {self.theta_r}, {self.theta_s}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.n <= 1.0:
            raise ValueError(f"n must exceed 1, got {self.n}")
        if self.K_s <= 0.0:
            raise ValueError(f"K_s must be positive, got {self.K_s}")
        m_exact = 1.0 - 1.0 / self.n
        if self.m is None:
            object.__setattr__(self, "m", m_exact)
        elif abs(self.m - m_exact) > 1e-12:
            raise ValueError(f"m={self.m} deviates from 1 - 1/n = {m_exact}")


@dataclass(frozen=True)
class GardnerParams:
    """Gardner exponential soil parameters.

    theta_r, theta_s : residual / saturated volumetric water content [-]
    alpha            : sorptive number [1/m]
    K_s              : saturated hydraulic conductivity [m/h]
    """

    theta_r: float
    theta_s: float
    alpha: float
    K_s: float

    def __post_init__(self):
        if not 0.0 <= self.theta_r < self.theta_s <= 1.0:
            raise ValueError(f"need 0 <= theta_r < theta_s <= 1, got {self.theta_r}, {self.theta_s}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.K_s <= 0.0:
            raise ValueError(f"K_s must be positive, got {self.K_s}")


SoilModel = VanGenuchtenParams | GardnerParams


def _unsaturated(psi):
    psi = np.asarray(psi, dtype=float)
    wet = psi >= 0.0
    # clip the dry branch argument so both np.where branches evaluate cleanly
    suction = np.where(wet, 0.0, -psi)
    return psi, wet, suction


def water_content(model: SoilModel, psi):
    """Volumetric water content theta(psi) [-]; theta_s on the saturated branch."""
    psi, wet, suction = _unsaturated(psi)
    dtheta = model.theta_s - model.theta_r
    if isinstance(model, GardnerParams):
        dry = model.theta_r + dtheta * np.exp(-model.alpha * suction)
    else:
        u = (model.alpha * suction) ** model.n
        dry = model.theta_r + dtheta * (1.0 + u) ** (-model.m)
    out = np.where(wet, model.theta_s, dry)
    return out if out.ndim else float(out)


def conductivity(model: SoilModel, psi):
    """Hydraulic conductivity K(psi) [m/h]; K_s on the saturated branch.

    The dry branch is floored at the smallest positive normal float so the
    positivity contract survives exp underflow at extreme suction.
    """
    psi, wet, suction = _unsaturated(psi)
    if isinstance(model, GardnerParams):
        dry = model.K_s * np.exp(-model.alpha * suction)
    else:
        av = model.alpha * suction
        u = av ** model.n
        kr = (1.0 - av ** (model.n - 1.0) * (1.0 + u) ** (-model.m)) ** 2 \
            / (1.0 + u) ** (model.m / 2.0)
        dry = model.K_s * kr
    dry = np.maximum(dry, np.finfo(float).tiny)
    out = np.where(wet, model.K_s, dry)
    return out if out.ndim else float(out)


def moisture_capacity(model: SoilModel, psi):
    """Specific moisture capacity C(psi) = d theta / d psi [1/m]; 0 when saturated."""
    psi, wet, suction = _unsaturated(psi)
    dtheta = model.theta_s - model.theta_r
    if isinstance(model, GardnerParams):
        dry = dtheta * model.alpha * np.exp(-model.alpha * suction)
    else:
        av = model.alpha * suction
        u = av ** model.n
        dry = dtheta * model.m * model.n * model.alpha * av ** (model.n - 1.0) \
            * (1.0 + u) ** (-model.m - 1.0)
    out = np.where(wet, 0.0, dry)
    return out if out.ndim else float(out)
