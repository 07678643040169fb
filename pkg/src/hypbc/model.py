"""Plant description: grids, coefficients, transport maps, norms.

The plant is a pair of counter-propagating transport equations on [0, 1],

    u_t + lambda(x) u_x = gamma1(x) v + d1(t) m1(x)
    v_t - mu(x) v_x     = gamma2(x) u + d2(t) m2(x)

with reflections u(t,0) = q v(t,0) + d3(t) and
v(t,1) = rho u(t,1) + U(t) + d4(t). Everything downstream (kernels,
steady states, simulators) shares the single uniform grid defined here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ParameterError
from .signals import TimeSignal, zero

__all__ = [
    "SpatialGrid",
    "SystemParams",
    "TransportMaps",
    "ControlConfig",
    "DisturbanceSet",
    "build_transport_maps",
    "validate_configuration",
    "ValidationEntry",
    "ValidationReport",
    "norm_E",
    "norm_Eprime",
    "epsilon_lower_bound",
    "sample_on_grid",
]

CoefficientLike = Union[float, int, Sequence[float], np.ndarray, Callable]


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on [0, 1] with n_cells intervals, n_cells + 1 nodes."""

    n_cells: int
    nodes: np.ndarray
    h: float

    def __post_init__(self):
        nd = self.nodes
        if nd[0] != 0.0 or nd[-1] != 1.0:
            raise ParameterError("grid must span exactly [0, 1]")
        if np.max(np.abs(np.diff(nd) - self.h)) > 1e-12:
            raise ParameterError("grid spacing is not uniform")

    @classmethod
    def make(cls, n_cells: int) -> "SpatialGrid":
        n_cells = int(n_cells)
        if n_cells < 2:
            raise ParameterError("n_cells must be at least 2")
        return cls(n_cells=n_cells, nodes=np.linspace(0.0, 1.0, n_cells + 1),
                   h=1.0 / n_cells)


def sample_on_grid(f: CoefficientLike, grid: SpatialGrid) -> np.ndarray:
    """Coerce a constant, callable, or sample sequence to nodal values."""
    if callable(f):
        vals = np.asarray(f(grid.nodes), dtype=float)
        if vals.shape == ():
            vals = np.full(grid.n_cells + 1, float(vals))
    elif np.isscalar(f):
        vals = np.full(grid.n_cells + 1, float(f))
    else:
        vals = np.asarray(f, dtype=float)
    if vals.shape != (grid.n_cells + 1,):
        raise ParameterError(
            f"coefficient samples have shape {vals.shape}, "
            f"expected ({grid.n_cells + 1},)")
    return vals


@dataclass(frozen=True)
class SystemParams:
    """Nodal samples of the plant coefficients plus the two reflections.

    `lam` and `mu` are the transport speeds of u and v, `gamma1` and
    `gamma2` the in-domain couplings, `q` the distal reflection at x = 0
    (must be nonzero for a well-posed boundary) and `rho` the proximal
    reflection at x = 1. Validity is checked by `validate_configuration`
    and enforced by the operations that need it, so that invalid
    parameter sets can still be constructed and reported on.
    """

    lam: np.ndarray
    mu: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    q: float
    rho: float

    @classmethod
    def from_coefficients(cls, grid: SpatialGrid, lam: CoefficientLike,
                          mu: CoefficientLike, gamma1: CoefficientLike,
                          gamma2: CoefficientLike, q: float,
                          rho: float) -> "SystemParams":
        return cls(lam=sample_on_grid(lam, grid), mu=sample_on_grid(mu, grid),
                   gamma1=sample_on_grid(gamma1, grid),
                   gamma2=sample_on_grid(gamma2, grid),
                   q=float(q), rho=float(rho))


@dataclass(frozen=True)
class TransportMaps:
    """Cumulative travel times phi1, phi2 and the loop delay tau.

    phi1(x) is the time a u-characteristic needs from 0 to x, phi2 the
    same for v from 0 to x; tau1 = phi1(1), tau2 = phi2(1), and
    tau = tau1 + tau2 is the total boundary-to-boundary loop delay.
    """

    nodes: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    tau1: float
    tau2: float
    tau: float

    def x_of_phi1(self, t):
        return np.interp(t, self.phi1, self.nodes)

    def x_of_phi2(self, t):
        return np.interp(t, self.phi2, self.nodes)


def _cumtrapz(f: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(f)
    out[0] = 0.0
    np.cumsum((f[1:] + f[:-1]) * (0.5 * h), out=out[1:])
    return out


def build_transport_maps(params: SystemParams, grid: SpatialGrid) -> TransportMaps:
    """Integrate 1/lambda and 1/mu by the composite trapezoid rule."""
    for name, speed in (("lambda", params.lam), ("mu", params.mu)):
        if np.any(speed <= 0.0):
            bad = grid.nodes[np.argmin(speed)]
            raise ParameterError(f"{name} must be positive; violated at x={bad:g}")
    phi1 = _cumtrapz(1.0 / params.lam, grid.h)
    phi2 = _cumtrapz(1.0 / params.mu, grid.h)
    return TransportMaps(nodes=grid.nodes, phi1=phi1, phi2=phi2,
                         tau1=float(phi1[-1]), tau2=float(phi2[-1]),
                         tau=float(phi1[-1] + phi2[-1]))


@dataclass(frozen=True)
class ControlConfig:
    """Controller knobs: partial-cancellation rho_tilde, integral gain
    k_I, and the observer measurement-trust blend epsilon."""

    rho_tilde: float
    k_I: float
    epsilon: float | None = None


def _zero_profile(grid: SpatialGrid) -> np.ndarray:
    return np.zeros(grid.n_cells + 1)


@dataclass(frozen=True)
class DisturbanceSet:
    """Disturbance generators d1..d4, their spatial profiles m1, m2, and
    the measurement noise n."""

    d1: TimeSignal
    d2: TimeSignal
    d3: TimeSignal
    d4: TimeSignal
    m1: np.ndarray
    m2: np.ndarray
    n: TimeSignal

    def __post_init__(self):
        if np.any(self.m1 < 0) or np.any(self.m2 < 0):
            raise ParameterError("disturbance profiles m1, m2 must be nonnegative")

    @classmethod
    def none(cls, grid: SpatialGrid) -> "DisturbanceSet":
        z = _zero_profile(grid)
        return cls(d1=zero(), d2=zero(), d3=zero(), d4=zero(),
                   m1=z, m2=z.copy(), n=zero())


def epsilon_lower_bound(q: float, rho: float) -> float:
    """Open lower bound of the admissible observer blend interval.

    Returns -inf when rho*q == 0 (any blend in [0, 1] is admissible).
    """
    prod = abs(rho * q)
    if prod == 0.0:
        return -np.inf
    return 1.0 - 1.0 / prod


@dataclass(frozen=True)
class ValidationEntry:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple

    @property
    def ok(self) -> bool:
        return all(e.passed for e in self.entries)

    def failing(self):
        return [e for e in self.entries if not e.passed]


def validate_configuration(params: SystemParams,
                           config: ControlConfig | None = None) -> ValidationReport:
    """Report-style check of the standing assumptions.

    Each entry records pass/fail and the quantity that decides it, so a
    caller can surface exactly which condition a configuration violates.
    """
    entries = []
    lam_min = float(np.min(params.lam))
    mu_min = float(np.min(params.mu))
    entries.append(ValidationEntry("lambda_positive", lam_min > 0.0, lam_min,
                                   "min lambda over the grid"))
    entries.append(ValidationEntry("mu_positive", mu_min > 0.0, mu_min,
                                   "min mu over the grid"))
    entries.append(ValidationEntry("q_nonzero", params.q != 0.0, params.q,
                                   "distal reflection"))
    rq = params.rho * params.q
    entries.append(ValidationEntry("rho_q_below_one", rq < 1.0, rq,
                                   "reflection product rho*q"))
    if config is not None:
        margin = abs(params.rho * params.q) + abs(config.rho_tilde * params.q)
        entries.append(ValidationEntry(
            "reflection_margin", margin < 1.0, margin,
            "|rho q| + |rho_tilde q| must stay below one"))
        if config.epsilon is not None:
            lo = epsilon_lower_bound(params.q, params.rho)
            ok = (config.epsilon > lo) and (0.0 <= config.epsilon <= 1.0)
            entries.append(ValidationEntry(
                "epsilon_admissible", ok, config.epsilon,
                f"must lie in ({lo:g}, 1] intersected with [0, 1]"))
    return ValidationReport(entries=tuple(entries))


def norm_Eprime(u: np.ndarray, v: np.ndarray) -> float:
    """Sup norm of the field pair over the grid."""
    return float(max(np.max(np.abs(u)), np.max(np.abs(v))))


def norm_E(u: np.ndarray, v: np.ndarray, eta: float) -> float:
    """Field sup norm plus the integrator magnitude."""
    return norm_Eprime(u, v) + abs(eta)
