"""Pseudo-steady state of the closed loop and the error variables.

With the in-domain couplings removed by the backstepping transform, the
disturbances enter the target dynamics through composite forcing
profiles. For frozen disturbance values the target system has a unique
steady profile pair fixed by a 2x2 linear system; tracking disturbance
values over time yields a time-parameterized pseudo-steady state whose
time derivatives come analytically from the disturbance generators,
never from finite differencing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .kernels import (InverseKernelSet, IntegralWeights, KernelSet,
                      full_interval_weights, interval_weights)
from .model import ControlConfig, DisturbanceSet, SpatialGrid, SystemParams

__all__ = [
    "ForcingProfiles",
    "SteadyState",
    "ErrorState",
    "SteadySolver",
    "forcing_profiles",
    "solve_pseudo_steady",
    "error_variables",
]


@dataclass(frozen=True)
class ForcingProfiles:
    """Target-system forcing profiles at a given time, with their first
    and second time derivatives."""

    d1m1: np.ndarray
    d2m2: np.ndarray
    d1m1_t: np.ndarray
    d2m2_t: np.ndarray
    d1m1_tt: np.ndarray
    d2m2_tt: np.ndarray
    t: float


@dataclass(frozen=True)
class SteadyState:
    """Pseudo-steady profiles and integrator value at time t.

    eta_ss is None when the integral gain is zero (no integral action,
    the steady integrator value is undefined).
    """

    alpha_ss: np.ndarray
    beta_ss: np.ndarray
    eta_ss: float | None
    alpha_ss_t: np.ndarray
    beta_ss_t: np.ndarray
    eta_ss_t: float | None
    alpha_ss_tt: np.ndarray
    beta_ss_tt: np.ndarray
    t: float


@dataclass(frozen=True)
class ErrorState:
    """Deviation from the pseudo-steady state, plus the transformed
    integrator gamma = eta_bar - int(l1 alpha_bar + l2 beta_bar)."""

    alpha_bar: np.ndarray
    beta_bar: np.ndarray
    eta_bar: float | None
    gamma: float | None


class SteadySolver:
    """Precomputed linear map from disturbance values (and derivatives)
    to the pseudo-steady state.

    The steady profiles are affine in (d1, d2, d3) with spatial blocks
    fixed by the kernels, and eta additionally involves d4. Building the
    blocks once makes per-time evaluation a handful of dot products,
    which the simulators rely on.
    """

    def __init__(self, params: SystemParams, grid: SpatialGrid,
                 kernels: KernelSet, lset: InverseKernelSet,
                 weights: IntegralWeights, dist: DisturbanceSet,
                 config: ControlConfig):
        self.params = params
        self.grid = grid
        self.dist = dist
        self.config = config

        w_lo = interval_weights(grid, lower=True)
        m_kuu = w_lo * kernels.kuu.values
        m_kuv = w_lo * kernels.kuv.values
        m_kvu = w_lo * kernels.kvu.values
        m_kvv = w_lo * kernels.kvv.values
        lam0 = params.lam[0]

        # forcing blocks per disturbance channel (d1, d2, d3)
        self.a_blocks = [dist.m1 - m_kuu @ dist.m1,
                         -m_kuv @ dist.m2,
                         -lam0 * kernels.kuu.values[:, 0]]
        self.b_blocks = [-m_kvu @ dist.m1,
                         dist.m2 - m_kvv @ dist.m2,
                         -lam0 * kernels.kvu.values[:, 0]]

        # antiderivative blocks: F_k(x) = int_x^1 A_k/lambda,
        # G_k(x) = int_0^x B_k/mu
        self.f_blocks = []
        self.g_blocks = []
        for a_blk, b_blk in zip(self.a_blocks, self.b_blocks):
            cum = _cumtrapz(a_blk / params.lam, grid.h)
            self.f_blocks.append(cum[-1] - cum)
            self.g_blocks.append(_cumtrapz(b_blk / params.mu, grid.h))

        wf = full_interval_weights(grid)
        laa_row = lset.laa.values[-1]
        lab_row = lset.lab.values[-1]
        a1 = np.array([[1.0 + wf @ laa_row, wf @ lab_row],
                       [-1.0 / params.q, 1.0]])
        det = float(np.linalg.det(a1))
        if abs(det) < 1e-10:
            raise ConfigurationError(
                f"steady-state matrix is numerically singular "
                f"(det={det:.3e}); solvability assumption fails")

        self.alpha_blocks = []
        self.beta_blocks = []
        self.eta_blocks = None
        self.eta_d4 = None
        eta_blocks = []
        for k in range(3):
            fk, gk = self.f_blocks[k], self.g_blocks[k]
            b1 = wf @ (laa_row * fk) + wf @ (lab_row * gk)
            b2 = -fk[0] / params.q - (1.0 / params.q if k == 2 else 0.0)
            ak = np.linalg.solve(a1, np.array([b1, b2]))
            p_alpha = ak[0] - fk
            p_beta = ak[1] - gk
            self.alpha_blocks.append(p_alpha)
            self.beta_blocks.append(p_beta)
            if config.k_I != 0.0:
                bdry = (p_beta[-1]
                        - (params.rho - config.rho_tilde) * p_alpha[-1])
                eta_blocks.append(bdry / config.k_I
                                  + wf @ (weights.l1 * p_alpha
                                          + weights.l2 * p_beta))
        if config.k_I != 0.0:
            self.eta_blocks = eta_blocks
            self.eta_d4 = -1.0 / config.k_I

    # -- disturbance evaluation ------------------------------------------

    def _d123(self, t, order: int):
        sigs = (self.dist.d1, self.dist.d2, self.dist.d3)
        if order == 0:
            return [float(s(t)) for s in sigs]
        if order == 1:
            return [float(s.derivative(t)) for s in sigs]
        return [float(s.second_derivative(t)) for s in sigs]

    def forcing(self, t: float) -> ForcingProfiles:
        rows = []
        for order in (0, 1, 2):
            d = self._d123(t, order)
            rows.append((sum(dk * blk for dk, blk in zip(d, self.a_blocks)),
                         sum(dk * blk for dk, blk in zip(d, self.b_blocks))))
        return ForcingProfiles(d1m1=rows[0][0], d2m2=rows[0][1],
                               d1m1_t=rows[1][0], d2m2_t=rows[1][1],
                               d1m1_tt=rows[2][0], d2m2_tt=rows[2][1],
                               t=float(t))

    def at(self, t: float) -> SteadyState:
        d0 = self._d123(t, 0)
        d1 = self._d123(t, 1)
        d2 = self._d123(t, 2)
        mix = lambda d, blocks: sum(dk * blk for dk, blk in zip(d, blocks))
        eta = eta_t = None
        if self.eta_blocks is not None:
            eta = float(sum(dk * ek for dk, ek in zip(d0, self.eta_blocks))
                        + float(self.dist.d4(t)) * self.eta_d4)
            eta_t = float(sum(dk * ek for dk, ek in zip(d1, self.eta_blocks))
                          + float(self.dist.d4.derivative(t)) * self.eta_d4)
        return SteadyState(
            alpha_ss=mix(d0, self.alpha_blocks),
            beta_ss=mix(d0, self.beta_blocks),
            eta_ss=eta,
            alpha_ss_t=mix(d1, self.alpha_blocks),
            beta_ss_t=mix(d1, self.beta_blocks),
            eta_ss_t=eta_t,
            alpha_ss_tt=mix(d2, self.alpha_blocks),
            beta_ss_tt=mix(d2, self.beta_blocks),
            t=float(t))

    def alpha_ss_boundary(self, t) -> float:
        """alpha_ss(t, 1), cheap enough for per-step logging."""
        d0 = self._d123(t, 0)
        return float(sum(dk * blk[-1]
                         for dk, blk in zip(d0, self.alpha_blocks)))

    def eta_ss_rate(self, t) -> float:
        if self.eta_blocks is None:
            raise ConfigurationError("eta steady state undefined for k_I = 0")
        d1 = self._d123(t, 1)
        return float(sum(dk * ek for dk, ek in zip(d1, self.eta_blocks))
                     + float(self.dist.d4.derivative(t)) * self.eta_d4)

    def alpha_tt_retarded(self, times: np.ndarray) -> np.ndarray:
        """alpha_ss_tt(x_k, times_k) for a per-node vector of times."""
        dd = [self.dist.d1.second_derivative(times),
              self.dist.d2.second_derivative(times),
              self.dist.d3.second_derivative(times)]
        return sum(ddk * blk for ddk, blk in zip(dd, self.alpha_blocks))

    def beta_tt_retarded(self, times: np.ndarray) -> np.ndarray:
        dd = [self.dist.d1.second_derivative(times),
              self.dist.d2.second_derivative(times),
              self.dist.d3.second_derivative(times)]
        return sum(ddk * blk for ddk, blk in zip(dd, self.beta_blocks))


def _cumtrapz(f: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(f)
    out[0] = 0.0
    np.cumsum((f[1:] + f[:-1]) * (0.5 * h), out=out[1:])
    return out


def forcing_profiles(dist: DisturbanceSet, kernels: KernelSet,
                     params: SystemParams, t: float, grid: SpatialGrid,
                     lset: InverseKernelSet, weights: IntegralWeights,
                     config: ControlConfig | None = None) -> ForcingProfiles:
    """One-shot forcing evaluation; reuse a SteadySolver in loops."""
    cfg = config or ControlConfig(rho_tilde=0.0, k_I=0.0)
    return SteadySolver(params, grid, kernels, lset, weights, dist,
                        cfg).forcing(t)


def solve_pseudo_steady(params: SystemParams, lset: InverseKernelSet,
                        dist: DisturbanceSet, t: float, grid: SpatialGrid,
                        kernels: KernelSet, weights: IntegralWeights,
                        config: ControlConfig) -> SteadyState:
    """One-shot pseudo-steady evaluation; reuse a SteadySolver in loops."""
    return SteadySolver(params, grid, kernels, lset, weights, dist,
                        config).at(t)


def error_variables(alpha: np.ndarray, beta: np.ndarray, eta: float | None,
                    ss: SteadyState, weights: IntegralWeights,
                    grid: SpatialGrid) -> ErrorState:
    """Pointwise deviation from the steady state plus the transformed
    integrator."""
    alpha_bar = alpha - ss.alpha_ss
    beta_bar = beta - ss.beta_ss
    eta_bar = gamma = None
    if eta is not None and ss.eta_ss is not None:
        wf = full_interval_weights(grid)
        eta_bar = float(eta - ss.eta_ss)
        gamma = eta_bar - float(wf @ (weights.l1 * alpha_bar
                                      + weights.l2 * beta_bar))
    return ErrorState(alpha_bar=alpha_bar, beta_bar=beta_bar,
                      eta_bar=eta_bar, gamma=gamma)
