"""Integral-action backstepping control laws and the integrator state.

The applied input is U = U_BS + k_I eta with eta integrating the
measured (noisy) output. U_BS comes in two forms: state feedback
evaluated on the transformed plant fields, and output feedback evaluated
verbatim on the observer fields with an epsilon-blended boundary term.
The two coincide when the observer matches the plant and the measurement
is clean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .kernels import (InverseKernelSet, IntegralWeights, KernelSet,
                      TransformOperator, full_interval_weights)
from .model import ControlConfig, SpatialGrid, SystemParams

__all__ = [
    "ControllerState",
    "StateFeedbackLaw",
    "OutputFeedbackLaw",
    "state_feedback_ubs",
    "output_feedback_ubs",
    "integrator_step",
    "total_control",
]


@dataclass(frozen=True)
class ControllerState:
    """Integrator value plus the previous measurement for the trapezoid
    update. The integrator consumes exactly the measured signal y_m."""

    eta: float
    y_m_prev: float | None = None
    mode: str = "state"


class StateFeedbackLaw:
    """Precomputed state-feedback backstepping law.

    Evaluates, on the transformed fields (alpha, beta):
    minus rho_tilde * alpha(t,1), the rho-weighted inverse-kernel
    boundary integrals, and the integral-action weight term.
    """

    def __init__(self, kernels: KernelSet, lset: InverseKernelSet,
                 weights: IntegralWeights, params: SystemParams,
                 config: ControlConfig, grid: SpatialGrid):
        self.transform = TransformOperator(kernels.kuu, kernels.kuv,
                                           kernels.kvu, kernels.kvv,
                                           grid, sign=-1.0)
        wf = full_interval_weights(grid)
        rho, k_i = params.rho, config.k_I
        self.rho_tilde = config.rho_tilde
        self.c_alpha = (-rho * wf * lset.laa.values[-1]
                        + wf * lset.lba.values[-1]
                        - k_i * wf * weights.l1)
        self.c_beta = (-rho * wf * lset.lab.values[-1]
                       + wf * lset.lbb.values[-1]
                       - k_i * wf * weights.l2)

    def __call__(self, u: np.ndarray, v: np.ndarray) -> float:
        alpha, beta = self.transform(u, v)
        return float(-self.rho_tilde * alpha[-1]
                     + self.c_alpha @ alpha + self.c_beta @ beta)


class OutputFeedbackLaw:
    """Precomputed output-feedback law on the observer fields.

    The boundary term blends the predicted output uhat(t,1) with the
    measurement y_m by epsilon; the direct-kernel boundary rows act on
    the raw observer fields and the integral-action weights act on their
    transform.
    """

    def __init__(self, kernels: KernelSet, weights: IntegralWeights,
                 params: SystemParams, config: ControlConfig,
                 grid: SpatialGrid):
        if config.epsilon is None:
            raise ValueError("output feedback requires epsilon")
        self.transform = TransformOperator(kernels.kuu, kernels.kuv,
                                           kernels.kvu, kernels.kvv,
                                           grid, sign=-1.0)
        wf = full_interval_weights(grid)
        rho_diff = params.rho - config.rho_tilde
        k_i = config.k_I
        self.rho_tilde = config.rho_tilde
        self.epsilon = config.epsilon
        self.c_u = (-rho_diff * wf * kernels.kuu.values[-1]
                    + wf * kernels.kvu.values[-1])
        self.c_v = (-rho_diff * wf * kernels.kuv.values[-1]
                    + wf * kernels.kvv.values[-1])
        self.w_l1 = k_i * wf * weights.l1
        self.w_l2 = k_i * wf * weights.l2

    def __call__(self, uhat: np.ndarray, vhat: np.ndarray,
                 y_m: float) -> float:
        alpha_h, beta_h = self.transform(uhat, vhat)
        return float(-self.rho_tilde * (1.0 - self.epsilon) * uhat[-1]
                     - self.rho_tilde * self.epsilon * y_m
                     + self.c_u @ uhat + self.c_v @ vhat
                     - self.w_l1 @ alpha_h - self.w_l2 @ beta_h)


def state_feedback_ubs(u: np.ndarray, v: np.ndarray, kernels: KernelSet,
                       lset: InverseKernelSet, weights: IntegralWeights,
                       params: SystemParams, config: ControlConfig,
                       grid: SpatialGrid) -> float:
    """One-shot state-feedback evaluation; loops should hold a
    StateFeedbackLaw instead."""
    return StateFeedbackLaw(kernels, lset, weights, params, config, grid)(u, v)


def output_feedback_ubs(uhat: np.ndarray, vhat: np.ndarray, y_m: float,
                        kernels: KernelSet, weights: IntegralWeights,
                        params: SystemParams, config: ControlConfig,
                        grid: SpatialGrid) -> float:
    """One-shot output-feedback evaluation."""
    return OutputFeedbackLaw(kernels, weights, params, config, grid)(
        uhat, vhat, y_m)


def integrator_step(state: ControllerState, y_m: float,
                    dt: float) -> ControllerState:
    """Trapezoidal integrator update. The first call only latches the
    measurement; increments start once two samples exist."""
    if state.y_m_prev is None:
        return replace(state, y_m_prev=float(y_m))
    eta = state.eta + 0.5 * dt * (state.y_m_prev + float(y_m))
    return replace(state, eta=eta, y_m_prev=float(y_m))


def total_control(ubs: float, eta: float, k_I: float) -> float:
    return float(ubs + k_I * eta)
