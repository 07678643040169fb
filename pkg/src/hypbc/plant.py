"""Disturbed plant simulator and the closed-loop orchestrator.

The fields advance by first-order upwind (exact transport at unit CFL
with constant speeds) with source terms evaluated explicitly at the
current step; boundary values are imposed after the interior update.
`run_closed_loop` wires measurement, integrator, control law, observer,
and plant into one deterministic loop and logs the traces the analysis
and acceptance checks consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import OutputFeedbackLaw, StateFeedbackLaw
from .errors import ConfigurationError, DivergenceError, ParameterError
from .kernels import (InverseKernelSet, IntegralWeights, KernelSet,
                      ObserverKernelSet, TransformOperator,
                      solve_observer_inverse)
from .model import (ControlConfig, DisturbanceSet, SpatialGrid, SystemParams,
                    TransportMaps, norm_Eprime)
from .observer import observer_step_arrays
from .signals import TimeSignal
from .steady import SteadySolver

__all__ = [
    "FieldState",
    "SimConfig",
    "TraceLog",
    "ClosedLoopSetup",
    "step_plant",
    "measure",
    "run_closed_loop",
]


@dataclass(frozen=True)
class FieldState:
    u: np.ndarray
    v: np.ndarray
    t: float


@dataclass(frozen=True)
class SimConfig:
    """Time-stepping configuration. `scheme` is 'upwind' or
    'characteristics' (integer-shift exact transport, constant
    coefficients only)."""

    dt: float
    horizon: float
    scheme: str = "upwind"

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise ParameterError("dt and horizon must be positive")
        if self.scheme not in ("upwind", "characteristics"):
            raise ParameterError(f"unknown scheme '{self.scheme}'")


@dataclass
class TraceLog:
    """Uniformly sampled closed-loop traces.

    obs_err and obs_err_target are NaN when no observer runs;
    alpha_bar_1 is the boundary value of the transformed field minus its
    pseudo-steady value (minus zero if no steady solver is attached).
    """

    t: np.ndarray
    y: np.ndarray
    y_m: np.ndarray
    U: np.ndarray
    eta: np.ndarray
    norm_Eprime: np.ndarray
    obs_err: np.ndarray
    alpha_bar_1: np.ndarray
    obs_err_target: np.ndarray | None = None

    def window_sup(self, quantity: str, t_lo: float, t_hi: float) -> float:
        vals = getattr(self, quantity)
        mask = (self.t >= t_lo - 1e-12) & (self.t <= t_hi + 1e-12)
        if not np.any(mask):
            raise ParameterError(f"no samples in [{t_lo:g}, {t_hi:g}]")
        return float(np.max(np.abs(vals[mask])))

    def to_csv(self, path) -> None:
        cols = ["t", "y", "y_m", "U", "eta", "norm_Eprime", "obs_err",
                "alpha_bar_1"]
        arrays = [getattr(self, c) for c in cols]
        if self.obs_err_target is not None:
            cols.append("obs_err_target")
            arrays.append(self.obs_err_target)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for row in zip(*arrays):
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _check_cfl(params: SystemParams, grid: SpatialGrid, dt: float) -> float:
    cfl = dt * max(float(np.max(params.lam)), float(np.max(params.mu))) / grid.h
    if cfl > 1.0 + 1e-12:
        raise ConfigurationError(f"CFL = {cfl:g} exceeds 1 "
                                 f"(dt too large for this grid)")
    return cfl


def _plant_step_arrays(u, v, t, params, dist, U, dt, h, scheme):
    src_u = params.gamma1 * v + float(dist.d1(t)) * dist.m1
    src_v = params.gamma2 * u + float(dist.d2(t)) * dist.m2
    u_new = np.empty_like(u)
    v_new = np.empty_like(v)
    if scheme == "characteristics":
        shift_u = params.lam[0] * dt / h
        shift_v = params.mu[0] * dt / h
        su, sv = int(round(shift_u)), int(round(shift_v))
        if (np.ptp(params.lam) > 0 or np.ptp(params.mu) > 0
                or abs(shift_u - su) > 1e-9 or abs(shift_v - sv) > 1e-9):
            raise ConfigurationError(
                "characteristics scheme needs constant speeds with "
                "lambda*dt/h and mu*dt/h integer")
        u_new[su:] = u[:len(u) - su]
        u_new[:su] = u[0]
        v_new[:len(v) - sv] = v[sv:]
        v_new[len(v) - sv:] = v[-1]
        u_new += dt * src_u
        v_new += dt * src_v
    else:
        r = dt / h
        u_new[1:] = u[1:] - r * params.lam[1:] * (u[1:] - u[:-1]) + dt * src_u[1:]
        v_new[:-1] = v[:-1] + r * params.mu[:-1] * (v[1:] - v[:-1]) + dt * src_v[:-1]
    t_new = t + dt
    u_new[0] = params.q * v_new[0] + float(dist.d3(t_new))
    v_new[-1] = params.rho * u_new[-1] + U + float(dist.d4(t_new))
    return u_new, v_new


def step_plant(state: FieldState, params: SystemParams, dist: DisturbanceSet,
               U: float, dt: float, grid: SpatialGrid,
               scheme: str = "upwind") -> FieldState:
    """Advance the plant one step under the given input."""
    _check_cfl(params, grid, dt)
    u_new, v_new = _plant_step_arrays(state.u, state.v, state.t, params,
                                      dist, U, dt, grid.h, scheme)
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise DivergenceError("plant state became non-finite",
                              last_valid_time=state.t)
    return FieldState(u=u_new, v=v_new, t=state.t + dt)


def measure(state: FieldState, noise: TimeSignal, t: float) -> float:
    """Measured output: the outgoing boundary value plus noise."""
    return float(state.u[-1] + float(noise(t)))


@dataclass
class ClosedLoopSetup:
    """Everything a closed-loop run needs, assembled once.

    mode is 'state', 'output', or 'open' (U identically equal to
    `open_loop_U`, for open-loop studies). A steady solver enables the
    alpha_bar boundary trace; observer pieces enable the error logs.
    """

    grid: SpatialGrid
    params: SystemParams
    maps: TransportMaps
    dist: DisturbanceSet
    config: ControlConfig
    mode: str
    kernels: KernelSet
    lset: InverseKernelSet
    weights: IntegralWeights
    sim: SimConfig
    u0: np.ndarray
    v0: np.ndarray
    eta0: float = 0.0
    okernels: ObserverKernelSet | None = None
    uhat0: np.ndarray | None = None
    vhat0: np.ndarray | None = None
    steady: SteadySolver | None = None
    open_loop_U: TimeSignal | None = None
    log_target_error: bool = True


def run_closed_loop(setup: ClosedLoopSetup) -> TraceLog:
    """Run the loop: measure, update integrator, evaluate the law,
    then advance plant (and observer) with that input held over the
    step. Raises DivergenceError carrying the last valid time if the
    state leaves the finite range.
    """
    grid, params, dist = setup.grid, setup.params, setup.dist
    sim = setup.sim
    _check_cfl(params, grid, sim.dt)
    n_steps = int(round(sim.horizon / sim.dt))
    if abs(n_steps * sim.dt - sim.horizon) > 1e-9:
        n_steps = int(np.ceil(sim.horizon / sim.dt))

    run_observer = setup.mode == "output" or (
        setup.okernels is not None and setup.uhat0 is not None)
    if setup.mode == "output" and (setup.okernels is None
                                   or setup.okernels.pplus is None):
        raise ConfigurationError("output feedback requires observer kernels "
                                 "with gains attached")

    if setup.mode == "state":
        law = StateFeedbackLaw(setup.kernels, setup.lset, setup.weights,
                               params, setup.config, grid)
    elif setup.mode == "output":
        law = OutputFeedbackLaw(setup.kernels, setup.weights, params,
                                setup.config, grid)
    elif setup.mode == "open":
        law = None
    else:
        raise ParameterError(f"unknown mode '{setup.mode}'")

    fwd = TransformOperator(setup.kernels.kuu, setup.kernels.kuv,
                            setup.kernels.kvu, setup.kernels.kvv,
                            grid, sign=-1.0)
    # boundary row of the forward transform: alpha(t, 1)
    row_u = np.zeros(grid.n_cells + 1)
    row_u[-1] = 1.0
    row_u += fwd.m11[-1]
    row_v = fwd.m12[-1].copy()

    obs_inverse = None
    if run_observer and setup.log_target_error:
        quu, quv, qvu, qvv = solve_observer_inverse(setup.okernels, grid)
        obs_inverse = TransformOperator(quu, quv, qvu, qvv, grid, sign=1.0)

    u = np.array(setup.u0, dtype=float)
    v = np.array(setup.v0, dtype=float)
    uhat = vhat = None
    if run_observer:
        uhat = np.array(setup.uhat0, dtype=float)
        vhat = np.array(setup.vhat0, dtype=float)

    m = n_steps + 1
    out = {name: np.empty(m) for name in
           ("t", "y", "y_m", "U", "eta", "norm_Eprime", "obs_err",
            "alpha_bar_1")}
    tgt = np.full(m, np.nan) if (run_observer and obs_inverse) else None
    if not run_observer:
        out["obs_err"].fill(np.nan)

    eta = float(setup.eta0)
    ym_prev = None
    k_i = setup.config.k_I

    for k in range(m):
        t = k * sim.dt
        y = float(u[-1])
        y_m = y + float(dist.n(t))
        if ym_prev is not None:
            eta += 0.5 * sim.dt * (ym_prev + y_m)
        ym_prev = y_m

        if setup.mode == "state":
            u_bs = law(u, v)
            u_ctl = u_bs + k_i * eta
        elif setup.mode == "output":
            u_bs = law(uhat, vhat, y_m)
            u_ctl = u_bs + k_i * eta
        else:
            u_ctl = float(setup.open_loop_U(t)) if setup.open_loop_U else 0.0

        alpha1 = float(row_u @ u + row_v @ v)
        if setup.steady is not None:
            alpha1 -= setup.steady.alpha_ss_boundary(t)

        out["t"][k] = t
        out["y"][k] = y
        out["y_m"][k] = y_m
        out["U"][k] = u_ctl
        out["eta"][k] = eta
        out["norm_Eprime"][k] = norm_Eprime(u, v)
        out["alpha_bar_1"][k] = alpha1
        if run_observer:
            eu = u - uhat
            ev = v - vhat
            out["obs_err"][k] = norm_Eprime(eu, ev)
            if obs_inverse is not None:
                ta, tb = obs_inverse(eu, ev)
                tgt[k] = norm_Eprime(ta, tb)

        if k == n_steps:
            break
        u, v = _plant_step_arrays(u, v, t, params, dist, u_ctl, sim.dt,
                                  grid.h, sim.scheme)
        if run_observer:
            # boundary condition holds at the new time; feed it the
            # fresh measurement so the error dynamics stay exactly
            # input-independent
            y_m_next = float(u[-1] + float(dist.n(t + sim.dt)))
            uhat, vhat = observer_step_arrays(uhat, vhat, y_m, u_ctl, params,
                                              setup.okernels, sim.dt, grid.h,
                                              y_m_bc=y_m_next)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise DivergenceError("plant state became non-finite",
                                  last_valid_time=t)
        if run_observer and not (np.all(np.isfinite(uhat))
                                 and np.all(np.isfinite(vhat))):
            raise DivergenceError("observer state became non-finite",
                                  last_valid_time=t)

    return TraceLog(t=out["t"], y=out["y"], y_m=out["y_m"], U=out["U"],
                    eta=out["eta"], norm_Eprime=out["norm_Eprime"],
                    obs_err=out["obs_err"], alpha_bar_1=out["alpha_bar_1"],
                    obs_err_target=tgt)
