"""Neutral delay equation induced by the closed-loop boundary.

The boundary error z(t) = alpha_bar(t, 1) of the regulated loop obeys

    zdot(t) = k1 zdot(t - tau) + k2 z(t - tau) + K(t),

with k1 = (rho - rho_tilde) q, k2 = k_I q (1 + l1(1) lambda(1)), and a
forcing K assembled from the noise and the steady-state time
derivatives. This module evaluates the stability boundary tau0 of the
characteristic equation s - (k1 s + k2) e^{-s tau} = 0 in two
independent ways, estimates the spectral abscissa by a root scan,
designs the integral gain, and integrates the equation by the method of
steps for cross-validation against the full simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionError, ParameterError
from .kernels import IntegralWeights, full_interval_weights
from .model import ControlConfig, DisturbanceSet, SpatialGrid, SystemParams, TransportMaps
from .steady import SteadySolver

__all__ = [
    "FeedbackGains",
    "StabilityReport",
    "NDEHistory",
    "NDETrace",
    "effective_gains",
    "tau0_formula",
    "tau0_oracle",
    "crossing_frequency",
    "spectral_abscissa",
    "stability_report",
    "select_kI",
    "simulate_nde",
    "classify_window_ratio",
    "window_sups",
    "nde_forcing_from_scenario",
]


@dataclass(frozen=True)
class FeedbackGains:
    k1: float
    k2: float
    tau: float


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    tau0: float
    omega_star: float
    s0_estimate: float
    margin: float
    k1: float
    k2: float
    tau: float
    note: str = ""

    def to_dict(self) -> dict:
        return {"stable": self.stable, "tau0": self.tau0,
                "omega_star": self.omega_star,
                "s0_estimate": self.s0_estimate, "margin": self.margin,
                "k1": self.k1, "k2": self.k2, "tau": self.tau,
                "note": self.note}


@dataclass(frozen=True)
class NDEHistory:
    """Initial segment of z and zdot on [-tau, 0], sampled at dt."""

    z: np.ndarray
    zdot: np.ndarray


@dataclass(frozen=True)
class NDETrace:
    t: np.ndarray
    z: np.ndarray
    zdot: np.ndarray
    forcing: np.ndarray


def effective_gains(params: SystemParams, config: ControlConfig,
                    weights: IntegralWeights,
                    maps: TransportMaps) -> FeedbackGains:
    return FeedbackGains(
        k1=(params.rho - config.rho_tilde) * params.q,
        k2=config.k_I * params.q * weights.boundary_factor,
        tau=maps.tau)


def _check_gain_domain(k1: float, k2: float) -> None:
    if abs(k1) >= 1.0:
        raise ParameterError(f"|k1| = {abs(k1):g} must be below one")
    if k2 == 0.0:
        raise ParameterError("k2 must be nonzero")
    if k2 > 0.0:
        raise ParameterError(f"k2 = {k2:g} must be negative")


def tau0_formula(k1: float, k2: float) -> float:
    """Closed-form critical delay, by branch in k1.

    The k1 > 0 branch uses arctan(sqrt(1 - k1^2) / k1), i.e. the
    crossing angle arccos(k1); putting k2 in that denominator yields a
    negative delay and disagrees with `tau0_oracle`, which is the
    arbiter here.
    """
    _check_gain_domain(k1, k2)
    r = np.sqrt(1.0 - k1 * k1)
    if k1 < 0.0:
        return float(-(r / abs(k2)) * np.arctan(r / abs(k1))
                     + np.pi * r / abs(k2))
    if k1 == 0.0:
        return float(np.pi / (2.0 * abs(k2)))
    return float((r / abs(k2)) * np.arctan(r / k1))


def crossing_frequency(k1: float, k2: float) -> float:
    """Imaginary-axis crossing frequency from the modulus condition
    omega^2 (1 - k1^2) = k2^2."""
    _check_gain_domain(k1, k2)
    return abs(k2) / np.sqrt(1.0 - k1 * k1)


def tau0_oracle(k1: float, k2: float) -> float:
    """Critical delay from first principles, independent of the branch
    formulas: the smallest tau > 0 putting a characteristic root at
    i omega_star, via the phase condition e^{-i omega tau} =
    i omega / (k1 i omega + k2)."""
    omega = crossing_frequency(k1, k2)
    w = (1j * omega) / (k1 * 1j * omega + k2)
    theta = float((-np.angle(w)) % (2.0 * np.pi))
    if theta == 0.0:
        theta = 2.0 * np.pi
    return theta / omega


@dataclass(frozen=True)
class SpectralScan:
    s0: float
    roots: np.ndarray


def spectral_abscissa(gains: FeedbackGains, re_range=None, im_range=None,
                      n_re: int = 40, n_im: int = 80,
                      newton_iters: int = 80,
                      root_tol: float = 1e-9) -> SpectralScan:
    """Estimate the spectral abscissa by a grid-seeded damped-Newton scan
    over a bounded rectangle of the upper half plane.

    Neutral equations carry infinite root chains, so the result is an
    estimate over the scan region, not a certificate. Default region:
    Re in [-5/tau, 2/tau], Im in [0, 20 pi/tau].
    """
    k1, k2, tau = gains.k1, gains.k2, gains.tau
    if k2 == 0.0:
        raise ParameterError("k2 must be nonzero")
    if tau <= 0.0:
        raise ParameterError("tau must be positive")
    if re_range is None:
        re_range = (-5.0 / tau, 2.0 / tau)
    if im_range is None:
        im_range = (0.0, 20.0 * np.pi / tau)
    if not (re_range[1] > re_range[0]) or not (im_range[1] >= im_range[0]):
        raise ParameterError("degenerate scan region")

    re = np.linspace(re_range[0], re_range[1], n_re)
    im = np.linspace(im_range[0], im_range[1], n_im)
    s = (re[None, :] + 1j * im[:, None]).ravel()

    def func(z):
        return z - (k1 * z + k2) * np.exp(-z * tau)

    def dfunc(z):
        e = np.exp(-z * tau)
        return 1.0 - k1 * e + tau * (k1 * z + k2) * e

    cap = 2.0 / tau
    for _ in range(newton_iters):
        f = func(s)
        df = dfunc(s)
        step = np.where(np.abs(df) > 1e-14, f / np.where(df == 0, 1.0, df), 0.0)
        # damping keeps strays from shooting off to huge |s|
        mag = np.abs(step)
        scale = np.ones_like(mag)
        big = mag > cap
        scale[big] = cap / mag[big]
        s = s - step * scale

    good = np.abs(func(s)) < root_tol
    pad_re = 0.1 * (re_range[1] - re_range[0])
    pad_im = 0.1 * (im_range[1] - im_range[0]) + 1e-9
    inside = ((s.real >= re_range[0] - pad_re) & (s.real <= re_range[1] + pad_re)
              & (s.imag >= im_range[0] - pad_im) & (s.imag <= im_range[1] + pad_im))
    cand = s[good & inside]
    cand = cand[np.abs(func(cand)) < root_tol]
    if cand.size == 0:
        return SpectralScan(s0=-np.inf, roots=np.empty(0, dtype=complex))
    # roots come in conjugate pairs; keep upper-half representatives
    cand = np.where(cand.imag < 0, np.conj(cand), cand)
    # deduplicate by rounding to a scale well below root spacing
    scale = max(1.0 / tau, float(np.max(np.abs(cand))))
    key = np.round(cand / (1e-7 * scale)).astype(np.complex128)
    _, keep = np.unique(key, return_index=True)
    roots = cand[np.sort(keep)]
    order = np.lexsort((roots.imag, -roots.real))
    roots = roots[order]
    return SpectralScan(s0=float(roots[0].real), roots=roots)


def stability_report(gains: FeedbackGains, scan: bool = True,
                     note: str = "") -> StabilityReport:
    """Assemble the stability verdict for a gain/delay triple."""
    try:
        tau0 = tau0_formula(gains.k1, gains.k2)
        omega = crossing_frequency(gains.k1, gains.k2)
        conditions = True
    except ParameterError:
        tau0 = float("inf") if gains.k2 == 0.0 else float("nan")
        omega = float("nan")
        conditions = False
    stable = bool(conditions and 0.0 < gains.tau < tau0)
    s0 = float("nan")
    if scan and gains.k2 != 0.0:
        s0 = spectral_abscissa(gains).s0
    margin = tau0 - gains.tau if conditions else float("nan")
    return StabilityReport(stable=stable, tau0=tau0, omega_star=omega,
                           s0_estimate=s0, margin=margin, k1=gains.k1,
                           k2=gains.k2, tau=gains.tau, note=note)


def select_kI(params: SystemParams, weights: IntegralWeights,
              maps: TransportMaps, rho_tilde: float,
              safety_margin: float, scan: bool = True):
    """Pick the integral gain so the loop delay sits at the requested
    fraction of the critical delay.

    The sign of k_I is chosen so the effective boundary gain is
    negative; the magnitude inverts the critical-delay formula so that
    tau = safety_margin * tau0. Returns (k_I, StabilityReport).
    """
    if not 0.0 < safety_margin < 1.0:
        raise ParameterError("safety margin must lie strictly inside (0, 1)")
    k1 = (params.rho - rho_tilde) * params.q
    if abs(k1) >= 1.0:
        raise ParameterError(
            f"|k1| = {abs(k1):g} >= 1; no stabilizing integral gain exists")
    bf = weights.boundary_factor
    if abs(bf) < 1e-6:
        raise AssumptionError(
            "boundary factor is numerically zero; integral action undefined")
    tau0_target = maps.tau / safety_margin
    # tau0 = sqrt(1 - k1^2) * arccos(k1) / |k2| across all branches
    k2_mag = float(np.sqrt(1.0 - k1 * k1) * np.arccos(k1) / tau0_target)
    k_i = -np.sign(params.q * bf) * k2_mag / abs(params.q * bf)
    gains = FeedbackGains(k1=k1, k2=-k2_mag, tau=maps.tau)
    report = stability_report(gains, scan=scan,
                              note=f"auto gain, margin {safety_margin:g}")
    return float(k_i), report


# ---------------------------------------------------------------------------
# simulation by the method of steps
# ---------------------------------------------------------------------------


def simulate_nde(gains: FeedbackGains, forcing, history: NDEHistory,
                 horizon: float, dt: float,
                 history_tol: float | None = None) -> NDETrace:
    """Integrate the delay equation with stored-derivative history.

    dt must divide tau so delayed samples land on stored nodes; zdot is
    explicit in the delayed values, and z advances by the trapezoid
    rule. The zdot history must be consistent with the z history (it is
    checked by central differences), because the delayed derivative is
    used directly rather than re-differenced.
    """
    tau = gains.tau
    if dt <= 0.0 or horizon <= 0.0:
        raise ParameterError("dt and horizon must be positive")
    m_float = tau / dt
    m = int(round(m_float))
    if m < 1 or abs(m_float - m) * dt > 1e-9:
        raise ParameterError(f"dt = {dt:g} does not divide tau = {tau:g}")
    zh = np.asarray(history.z, dtype=float)
    zdh = np.asarray(history.zdot, dtype=float)
    if zh.shape != (m + 1,) or zdh.shape != (m + 1,):
        raise ParameterError(
            f"history must hold {m + 1} samples covering [-tau, 0]")
    if m >= 2:
        fd = (zh[2:] - zh[:-2]) / (2.0 * dt)
        tol = history_tol
        if tol is None:
            scale = max(1.0, float(np.max(np.abs(zdh))))
            tol = 1e-8 + 20.0 * dt * scale
        err = float(np.max(np.abs(fd - zdh[1:-1])))
        if err > tol:
            raise ParameterError(
                f"zdot history disagrees with the z history "
                f"(max deviation {err:.3e} > tol {tol:.3e})")

    n_steps = int(round(horizon / dt))
    total = m + 1 + n_steps
    z = np.empty(total)
    zd = np.empty(total)
    kt = np.zeros(total)
    z[:m + 1] = zh
    zd[:m + 1] = zdh
    k1, k2 = gains.k1, gains.k2
    if forcing is None:
        forcing = lambda t: 0.0
    for j in range(m + 1, total):
        t = (j - m) * dt
        f = float(forcing(t))
        kt[j] = f
        zd[j] = k1 * zd[j - m] + k2 * z[j - m] + f
        z[j] = z[j - 1] + 0.5 * dt * (zd[j - 1] + zd[j])
    t_axis = (np.arange(total) - m) * dt
    return NDETrace(t=t_axis, z=z, zdot=zd, forcing=kt)


def window_sups(trace: NDETrace, tau: float,
                omega_ref: float | None = None,
                sigma_ref: float = 0.0) -> np.ndarray:
    """sup over consecutive windows of length tau, t >= 0 only.

    With omega_ref (and optionally sigma_ref, the dominant root's real
    part) the windows measure the mode envelope
    sqrt(z^2 + ((sigma_ref z - zdot)/omega_ref)^2) instead of |z|. Near
    the critical delay the dominant pair oscillates at omega with
    omega*tau = arccos(k1) < pi, so a tau-window never brackets a full
    peak of z itself and raw |z| window sups alias the phase; the mode
    envelope is phase-free.
    """
    dt = float(trace.t[1] - trace.t[0])
    m = int(round(tau / dt))
    start = int(np.searchsorted(trace.t, -0.5 * dt))
    if omega_ref:
        z = np.hypot(trace.z[start:],
                     (sigma_ref * trace.z[start:] - trace.zdot[start:])
                     / omega_ref)
    else:
        z = np.abs(trace.z[start:])
    n_win = z.size // m
    if n_win == 0:
        raise ParameterError("horizon shorter than one delay window")
    return np.array([z[k * m:(k + 1) * m + 1].max() for k in range(n_win)])


def classify_window_ratio(trace: NDETrace, tau: float,
                          omega_ref: float | None = None,
                          sigma_ref: float = 0.0):
    """Label a trace by the ratio of window sups over the last two full
    delay windows: below 0.95 decays, above 1.05 grows, otherwise
    inconclusive. Returns (ratio, label). See `window_sups` for the
    envelope option."""
    sups = window_sups(trace, tau, omega_ref, sigma_ref)
    if sups.size < 2:
        raise ParameterError("need at least two delay windows to classify")
    prev, last = sups[-2], sups[-1]
    if prev == 0.0:
        return 0.0 if last == 0.0 else np.inf, \
            "inconclusive" if last else "decay"
    ratio = float(last / prev)
    if ratio < 0.95:
        return ratio, "decay"
    if ratio > 1.05:
        return ratio, "growth"
    return ratio, "inconclusive"


def nde_forcing_from_scenario(dist: DisturbanceSet, steady: SteadySolver,
                              gains_config: ControlConfig,
                              params: SystemParams, maps: TransportMaps,
                              weights: IntegralWeights, grid: SpatialGrid):
    """Assemble the delay-equation forcing K(t) for a scenario.

    K(t) combines the delayed noise, the delayed steady integrator
    rate, and quadratures of the steady second derivatives with
    per-position retarded arguments (each spatial point contributes at
    the time its characteristic left the far boundary path).
    """
    tau, tau1 = maps.tau, maps.tau1
    wf = full_interval_weights(grid)
    inv_mu = 1.0 / params.mu
    inv_lam = 1.0 / params.lam
    lag_beta = tau1 + maps.phi2          # per-node retardation for beta_tt
    lag_alpha = tau1 - maps.phi1         # per-node retardation for alpha_tt
    kq = gains_config.k_I * params.q
    noise = dist.n

    def forcing(t: float) -> float:
        delayed = float(noise(t - tau)) - steady.eta_ss_rate(t - tau)
        beta_tt = steady.beta_tt_retarded(t - lag_beta)
        alpha_tt = steady.alpha_tt_retarded(t - lag_alpha)
        return (kq * delayed
                - params.q * float(wf @ (inv_mu * beta_tt))
                - float(wf @ (inv_lam * alpha_tt)))

    return forcing
