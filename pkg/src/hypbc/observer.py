"""Boundary observer with a tunable measurement-trust blend.

The observer copies the plant dynamics, injects the boundary output
mismatch through the gains P+ and P-, and closes its own actuated
boundary with a blend of the predicted and measured output:
vhat(t,1) = rho (1-eps) uhat(t,1) + rho eps y_m(t) + U(t). The blend
must sit close enough to 1 for the error system to contract; the
admissible interval, the error forcing profiles, and the ISS envelope
constants of the disturbed error system are computed here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError, ParameterError, SolverError
from .kernels import ObserverKernelSet, interval_weights
from .model import (ControlConfig, SpatialGrid, SystemParams, TransportMaps,
                    epsilon_lower_bound)

__all__ = [
    "ObserverState",
    "EpsilonInterval",
    "ErrorForcingProfiles",
    "ISSConstants",
    "EnvelopeReport",
    "step_observer",
    "observer_step_arrays",
    "epsilon_interval",
    "error_forcing_profiles",
    "error_forcing_residuals",
    "iss_constants",
    "iss_envelope_check",
]


@dataclass(frozen=True)
class ObserverState:
    uhat: np.ndarray
    vhat: np.ndarray
    t: float


@dataclass(frozen=True)
class EpsilonInterval:
    """Admissible blend interval (lower, 1], intersected with [0, 1].

    `lower` is the raw open bound (may be negative or -inf); `low` is
    its clip to [0, 1], so the usable range is (low, 1] when lower >= 0
    and [low, 1] otherwise.
    """

    lower: float
    low: float
    high: float = 1.0

    def contains(self, eps: float) -> bool:
        return (eps > self.lower) and (0.0 <= eps <= self.high)

    def auto(self) -> float:
        """Midpoint of the usable range, the default blend."""
        return 0.5 * (self.low + self.high)


def epsilon_interval(params: SystemParams) -> EpsilonInterval:
    lower = epsilon_lower_bound(params.q, params.rho)
    return EpsilonInterval(lower=lower, low=max(lower, 0.0))


def observer_step_arrays(uhat: np.ndarray, vhat: np.ndarray, y_m: float,
                         U: float, params: SystemParams,
                         okernels: ObserverKernelSet, dt: float,
                         h: float, y_m_bc: float | None = None):
    """First-order upwind step of the observer equations (array core).

    Output-injection sources use the step-start measurement; the
    boundary condition is an algebraic constraint at the new time, so
    callers that already know the new-time measurement pass it as
    y_m_bc (the closed loop does; it keeps the error dynamics exactly
    input-independent instead of O(dt)-leaky).
    """
    lam, mu = params.lam, params.mu
    g1, g2 = params.gamma1, params.gamma2
    eps = okernels.epsilon
    mismatch = uhat[-1] - y_m
    src_u = g1 * vhat - okernels.pplus * mismatch
    src_v = g2 * uhat - okernels.pminus * mismatch
    r = dt / h
    u_new = np.empty_like(uhat)
    v_new = np.empty_like(vhat)
    u_new[1:] = uhat[1:] - r * lam[1:] * (uhat[1:] - uhat[:-1]) + dt * src_u[1:]
    v_new[:-1] = vhat[:-1] + r * mu[:-1] * (vhat[1:] - vhat[:-1]) + dt * src_v[:-1]
    u_new[0] = params.q * v_new[0]
    bc = y_m if y_m_bc is None else y_m_bc
    v_new[-1] = params.rho * (1.0 - eps) * u_new[-1] + params.rho * eps * bc + U
    return u_new, v_new


def step_observer(state: ObserverState, y_m: float, U: float,
                  okernels: ObserverKernelSet, params: SystemParams,
                  config: ControlConfig, dt: float,
                  grid: SpatialGrid) -> ObserverState:
    """Advance the observer one step; raises on CFL violation or
    non-finite values."""
    if okernels.pplus is None or okernels.epsilon is None:
        raise ConfigurationError("observer gains not attached; call "
                                 "observer_gains with the configured epsilon")
    cfl = dt * max(np.max(params.lam), np.max(params.mu)) / grid.h
    if cfl > 1.0 + 1e-12:
        raise ConfigurationError(f"CFL = {cfl:g} exceeds 1")
    u_new, v_new = observer_step_arrays(state.uhat, state.vhat, y_m, U,
                                        params, okernels, dt, grid.h)
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise DivergenceError("observer state became non-finite",
                              last_valid_time=state.t)
    return ObserverState(uhat=u_new, vhat=v_new, t=state.t + dt)


# ---------------------------------------------------------------------------
# error forcing profiles (diagnostics for the disturbed error system)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorForcingProfiles:
    """Spatial profiles through which noise and disturbances force the
    transformed observer-error system: f* act on the rightward error
    field, g* on the leftward one, per input channel (n, d1, d2, d4)."""

    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    f4: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    g4: np.ndarray
    iterations: int = 0

    def stacked(self):
        return (self.f1, self.f2, self.f3, self.f4,
                self.g1, self.g2, self.g3, self.g4)


def _error_forcing_rhs(okernels: ObserverKernelSet, params: SystemParams,
                       m1: np.ndarray, m2: np.ndarray, epsilon: float):
    mu1 = params.mu[-1]
    rho_eps = params.rho * epsilon
    puv1 = okernels.puv.values[:, -1]
    pvv1 = okernels.pvv.values[:, -1]
    zeros = np.zeros_like(m1)
    rhs_f = [-okernels.pplus - mu1 * rho_eps * puv1, m1, zeros, mu1 * puv1]
    rhs_g = [-okernels.pminus - mu1 * rho_eps * pvv1, zeros, m2, mu1 * pvv1]
    return rhs_f, rhs_g


def error_forcing_profiles(okernels: ObserverKernelSet,
                           params: SystemParams, m1: np.ndarray,
                           m2: np.ndarray, epsilon: float,
                           grid: SpatialGrid, tol: float = 1e-10,
                           max_iter: int = 500) -> ErrorForcingProfiles:
    """Solve the coupled second-kind Volterra system for the eight
    profiles by joint successive approximation.

    The g-profiles couple back through the pvu kernel (the transform row
    that feeds the leftward field), mirroring the f-profiles' puv
    coupling.
    """
    if okernels.pplus is None:
        raise ConfigurationError("observer gains required; call observer_gains")
    w_up = interval_weights(grid, lower=False)
    m_uu = w_up * okernels.puu.values
    m_uv = w_up * okernels.puv.values
    m_vu = w_up * okernels.pvu.values
    m_vv = w_up * okernels.pvv.values
    rhs_f, rhs_g = _error_forcing_rhs(okernels, params, m1, m2, epsilon)

    f = [np.zeros_like(m1) for _ in range(4)]
    g = [np.zeros_like(m1) for _ in range(4)]
    history = []
    for it in range(1, max_iter + 1):
        upd = 0.0
        for k in range(4):
            f_new = rhs_f[k] + m_uu @ f[k] + m_uv @ g[k]
            g_new = rhs_g[k] + m_vu @ f[k] + m_vv @ g[k]
            upd = max(upd, float(np.max(np.abs(f_new - f[k]))),
                      float(np.max(np.abs(g_new - g[k]))))
            f[k], g[k] = f_new, g_new
        history.append(upd)
        if upd < tol:
            return ErrorForcingProfiles(f1=f[0], f2=f[1], f3=f[2], f4=f[3],
                                        g1=g[0], g2=g[1], g3=g[2], g4=g[3],
                                        iterations=it)
    raise SolverError(f"error-forcing iteration did not contract to {tol:g} "
                      f"in {max_iter} sweeps", history)


def error_forcing_residuals(profiles: ErrorForcingProfiles,
                            okernels: ObserverKernelSet,
                            params: SystemParams, m1: np.ndarray,
                            m2: np.ndarray, epsilon: float,
                            grid: SpatialGrid) -> np.ndarray:
    """Sup-norm residual of each of the eight defining equations after
    substitution; the independent check that the solve converged to the
    stated system."""
    w_up = interval_weights(grid, lower=False)
    m_uu = w_up * okernels.puu.values
    m_uv = w_up * okernels.puv.values
    m_vu = w_up * okernels.pvu.values
    m_vv = w_up * okernels.pvv.values
    rhs_f, rhs_g = _error_forcing_rhs(okernels, params, m1, m2, epsilon)
    f = [profiles.f1, profiles.f2, profiles.f3, profiles.f4]
    g = [profiles.g1, profiles.g2, profiles.g3, profiles.g4]
    res = []
    for k in range(4):
        res.append(np.max(np.abs(f[k] - (rhs_f[k] + m_uu @ f[k] + m_uv @ g[k]))))
    for k in range(4):
        res.append(np.max(np.abs(g[k] - (rhs_g[k] + m_vu @ f[k] + m_vv @ g[k]))))
    return np.asarray(res)


# ---------------------------------------------------------------------------
# ISS constants and envelope
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ISSConstants:
    """Constants of the disturbed-error ISS bound: transient factor C,
    decay rate nu (inf in the finite-time regime), and the linear gain
    slope of the input term."""

    C: float
    nu: float
    gain_h2_slope: float
    tau: float

    def h1(self, x0: float, t) -> np.ndarray:
        """Transient envelope. In the finite-time regime (nu = inf) it
        is C*x0 up to one loop delay and exactly zero beyond."""
        t = np.asarray(t, dtype=float)
        if np.isinf(self.nu):
            return np.where(t <= self.tau, self.C * x0, 0.0)
        return self.C * np.exp(-self.nu * t) * x0

    def h2(self, input_sup: float) -> float:
        return self.gain_h2_slope * float(input_sup)


def iss_constants(params: SystemParams, config: ControlConfig,
                  maps: TransportMaps) -> ISSConstants:
    """Evaluate the printed envelope constants.

    The contraction factor is |q rho (1-eps)|; the decay rate uses its
    magnitude inside the logarithm (the signed product may be negative,
    which only flips boundary values, not their size).
    """
    if config.epsilon is None:
        raise ParameterError("epsilon required for ISS constants")
    eps = config.epsilon
    contraction = abs(params.q * params.rho * (1.0 - eps))
    if contraction >= 1.0:
        raise ConfigurationError(
            f"|q rho (1-eps)| = {contraction:g} >= 1; blend outside the "
            f"admissible interval")
    refl = abs(params.rho * (1.0 - eps))
    c = 2.0 + abs(params.q) + refl
    nu = np.inf if contraction == 0.0 else float(
        np.log(1.0 / contraction) / maps.tau)
    lam_min = float(np.min(params.lam))
    mu_min = float(np.min(params.mu))
    tau = maps.tau
    slope = (2.0 * c / (1.0 - contraction)
             * (tau + 1.0 / lam_min + 1.0 / mu_min + 2.0)
             + 2.0 + abs(params.q) * tau + refl * tau
             + (2.0 * tau + 1.0 / lam_min + 1.0 / mu_min))
    return ISSConstants(C=c, nu=nu, gain_h2_slope=float(slope), tau=tau)


@dataclass(frozen=True)
class EnvelopeReport:
    passed: bool
    min_margin: float
    worst_t: float

    def __bool__(self):
        return self.passed


def iss_envelope_check(times: np.ndarray, err_norms: np.ndarray,
                       consts: ISSConstants,
                       inputs_sup: float) -> EnvelopeReport:
    """One-sided check that the logged error norms sit below the
    envelope h1(initial, t) + h2(input sup) pointwise in t.

    The constants are conservative, so only violation matters; tightness
    is never asserted.
    """
    times = np.asarray(times, dtype=float)
    err = np.asarray(err_norms, dtype=float)
    x0 = float(err[0])
    envelope = consts.h1(x0, times) + consts.h2(inputs_sup)
    margin = envelope - err
    worst = int(np.argmin(margin))
    return EnvelopeReport(passed=bool(np.all(margin >= -1e-12)),
                          min_margin=float(margin[worst]),
                          worst_t=float(times[worst]))
