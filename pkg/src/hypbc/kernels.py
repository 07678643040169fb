"""Backstepping kernels, their inverses, observer kernels, and weights.

The controller kernels (kuu, kuv, kvu, kvv) live on the lower triangle
{0 <= xi <= x <= 1} and remove the in-domain couplings of the plant; the
observer kernels (puu, puv, pvu, pvv) live on the upper triangle and do
the same for the output-injection error system. Both families satisfy
first-order Goursat systems whose characteristics never leave their
triangle, so each kernel is computed from an equivalent integral
equation along its characteristics, iterated to a fixed point
(successive approximation). Written in conservative form,

    d/ds [ speed(s) * k(x(s), s) ] = coupling(s) * partner(x(s), s),

the update needs no derivatives of the transport speeds.

Correctness is not taken from the kernel equations themselves: the test
suite enforces the operational consequences (transformed fields obey the
uncoupled target dynamics, the inverse transform round-trips, the ideal
observer error vanishes in finite time).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AssumptionError, ParameterError, SolverError
from .model import SpatialGrid, SystemParams, TransportMaps, build_transport_maps

__all__ = [
    "TriangularField",
    "KernelSet",
    "InverseKernelSet",
    "ObserverKernelSet",
    "IntegralWeights",
    "solve_control_kernels",
    "solve_observer_kernels",
    "solve_inverse_kernels",
    "solve_observer_inverse",
    "observer_gains",
    "solve_integral_weights",
    "check_assumption3",
    "TransformOperator",
    "apply_transform",
    "apply_inverse",
    "interval_weights",
    "full_interval_weights",
    "write_kernels_csv",
]

_DEFAULT_TOL = 1e-10
_DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class TriangularField:
    """Nodal samples of a kernel on a triangular half of the unit square.

    `values` is (n+1, n+1) indexed [x, xi] and is zero outside the
    domain; `lower` selects {xi <= x} (controller family) or {xi >= x}
    (observer family).
    """

    values: np.ndarray
    lower: bool

    def interp(self, x, xi):
        """Piecewise-linear interpolation restricted to the triangle.

        Each grid cell is split along its main diagonal into two
        simplices, so cells straddling the domain edge never read
        out-of-domain corners. Queries are projected onto the triangle.
        """
        n = self.values.shape[0] - 1
        return _tri_interp(self.values, n, 1.0 / n, np.asarray(x, dtype=float),
                           np.asarray(xi, dtype=float), self.lower)


def _tri_interp(values: np.ndarray, n: int, h: float, xq, xiq, lower: bool):
    xq = np.clip(xq, 0.0, 1.0)
    xiq = np.clip(xiq, 0.0, 1.0)
    xiq = np.minimum(xiq, xq) if lower else np.maximum(xiq, xq)
    gi = np.clip((xq / h).astype(np.int64), 0, n - 1)
    gj = np.clip((xiq / h).astype(np.int64), 0, n - 1)
    uu = xq / h - gi
    ww = xiq / h - gj
    flat = values.ravel()
    base = gi * (n + 1) + gj
    v00 = flat[base]
    v11 = flat[base + n + 2]
    v10 = flat[base + n + 1]
    v01 = flat[base + 1]
    return np.where(ww <= uu,
                    v00 * (1.0 - uu) + v10 * (uu - ww) + v11 * ww,
                    v00 * (1.0 - ww) + v01 * (ww - uu) + v11 * uu)


@dataclass(frozen=True)
class KernelSet:
    """Controller kernels on the lower triangle."""

    kuu: TriangularField
    kuv: TriangularField
    kvu: TriangularField
    kvv: TriangularField
    iterations: int = 0
    final_update: float = 0.0

    def fields(self):
        return {"kuu": self.kuu, "kuv": self.kuv,
                "kvu": self.kvu, "kvv": self.kvv}


@dataclass(frozen=True)
class InverseKernelSet:
    """Inverse-transform kernels on the lower triangle."""

    laa: TriangularField
    lab: TriangularField
    lba: TriangularField
    lbb: TriangularField
    iterations: int = 0
    final_update: float = 0.0

    def fields(self):
        return {"laa": self.laa, "lab": self.lab,
                "lba": self.lba, "lbb": self.lbb}


@dataclass(frozen=True)
class ObserverKernelSet:
    """Observer kernels on the upper triangle, plus the output-injection
    gains once `observer_gains` has been applied."""

    puu: TriangularField
    puv: TriangularField
    pvu: TriangularField
    pvv: TriangularField
    pplus: np.ndarray | None = None
    pminus: np.ndarray | None = None
    epsilon: float | None = None
    iterations: int = 0
    final_update: float = 0.0

    def fields(self):
        return {"puu": self.puu, "puv": self.puv,
                "pvu": self.pvu, "pvv": self.pvv}


@dataclass(frozen=True)
class IntegralWeights:
    """Spatial weights of the integral action and the boundary factor
    1 + l1(1) lambda(1) that scales the effective integral gain."""

    l1: np.ndarray
    l2: np.ndarray
    boundary_factor: float


# ---------------------------------------------------------------------------
# characteristic-path fixed point
# ---------------------------------------------------------------------------


@dataclass
class _PathGroup:
    ii: np.ndarray
    jj: np.ndarray
    X: np.ndarray            # (m, P) x-positions along the characteristics
    S: np.ndarray            # (P,) or (m, P) integration variable (xi)
    W: np.ndarray            # quadrature weights fused with the coupling
    denom: np.ndarray        # (m,)
    data: np.ndarray | None = None       # fixed boundary-data term
    foot_scale: np.ndarray | None = None  # partner gathered at the foot
    foot_x: np.ndarray | None = None
    foot_s: np.ndarray | None = None


def _trapw(p: int) -> np.ndarray:
    if p < 2:
        raise ValueError("need at least two waypoints")
    w = np.full(p, 1.0 / (p - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _sweep(groups, partner: np.ndarray, out: np.ndarray, n: int, h: float,
           lower: bool) -> None:
    for g in groups:
        S = np.broadcast_to(g.S, g.X.shape)
        vals = _tri_interp(partner, n, h, g.X.ravel(), S.ravel(), lower)
        tot = (vals.reshape(g.X.shape) * g.W).sum(axis=-1)
        if g.data is not None:
            tot = tot + g.data
        if g.foot_scale is not None:
            tot = tot + g.foot_scale * _tri_interp(partner, n, h, g.foot_x,
                                                   g.foot_s, lower)
        out[g.ii, g.jj] = tot / g.denom


def _solve_pair(groups_a, groups_b, n, h, lower, tol, max_iter, label):
    """Gauss-Seidel fixed point on a coupled kernel pair.

    Kernel A integrates kernel B along A's characteristics and vice
    versa; the pair is closed. Returns (values_a, values_b, iterations,
    history of sup-norm updates).
    """
    a = np.zeros((n + 1, n + 1))
    b = np.zeros((n + 1, n + 1))
    new_a = np.zeros_like(a)
    new_b = np.zeros_like(b)
    history = []
    for it in range(1, max_iter + 1):
        _sweep(groups_a, b, new_a, n, h, lower)
        _sweep(groups_b, new_a, new_b, n, h, lower)
        upd = max(np.max(np.abs(new_a - a)), np.max(np.abs(new_b - b)))
        history.append(upd)
        a, new_a = new_a, a
        b, new_b = new_b, b
        if upd < tol:
            return a, b, it, history
    raise SolverError(f"{label} kernel iteration did not contract to "
                      f"{tol:g} in {max_iter} sweeps", history)


def _controller_groups(params: SystemParams, grid: SpatialGrid,
                       maps: TransportMaps):
    x, h, n = grid.nodes, grid.h, grid.n_cells
    lam, mu = params.lam, params.mu
    g1, g2 = params.gamma1, params.gamma2
    phi1, phi2 = maps.phi1, maps.phi2
    psi = phi1 + phi2

    def at(arr, s):
        return np.interp(s, x, arr)

    kuu, kuv, kvu, kvv = [], [], [], []

    # kuu, kvv: data on the xi = 0 edge (tied to the partner through the
    # distal reflection), characteristics rising from it.
    for j in range(n + 1):
        ii = np.arange(j, n + 1)
        jj = np.full(ii.shape, j)
        P = j + 2
        S = np.linspace(0.0, x[j], P)
        tw = _trapw(P) * x[j]

        c = phi1[ii] - phi1[j]
        X = np.interp(c[:, None] + np.interp(S, x, phi1)[None, :], phi1, x)
        kuu.append(_PathGroup(ii=ii, jj=jj, X=X, S=S, W=-tw * at(g2, S),
                              denom=np.full(ii.shape, lam[j]),
                              foot_scale=np.full(ii.shape, mu[0] / params.q),
                              foot_x=X[:, 0].copy(),
                              foot_s=np.zeros(ii.shape)))

        c = phi2[ii] - phi2[j]
        X = np.interp(c[:, None] + np.interp(S, x, phi2)[None, :], phi2, x)
        kvv.append(_PathGroup(ii=ii, jj=jj, X=X, S=S, W=tw * at(g1, S),
                              denom=np.full(ii.shape, mu[j]),
                              foot_scale=np.full(ii.shape, params.q * lam[0]),
                              foot_x=X[:, 0].copy(),
                              foot_s=np.zeros(ii.shape)))

    # kuv, kvu: data on the diagonal, characteristics descending from it.
    t01 = {}
    for d in range(n + 1):
        jj = np.arange(0, n + 1 - d)
        ii = jj + d
        P = d + 2
        t = t01.setdefault(P, np.linspace(0.0, 1.0, P))
        tw = _trapw(P)

        c = phi1[ii] + phi2[jj]
        xd = np.interp(c, psi, x)
        span = xd - x[jj]
        S = x[jj][:, None] + span[:, None] * t[None, :]
        X = np.interp(c[:, None] - np.interp(S, x, phi2), phi1, x)
        lam_d, mu_d = at(lam, xd), at(mu, xd)
        kuv.append(_PathGroup(
            ii=ii, jj=jj, X=X, S=S,
            W=-tw[None, :] * span[:, None] * at(g1, S),
            denom=mu[jj],
            data=mu_d * at(g1, xd) / (lam_d + mu_d)))

        c = phi2[ii] + phi1[jj]
        xd = np.interp(c, psi, x)
        span = xd - x[jj]
        S = x[jj][:, None] + span[:, None] * t[None, :]
        X = np.interp(c[:, None] - np.interp(S, x, phi1), phi2, x)
        lam_d, mu_d = at(lam, xd), at(mu, xd)
        kvu.append(_PathGroup(
            ii=ii, jj=jj, X=X, S=S,
            W=tw[None, :] * span[:, None] * at(g2, S),
            denom=lam[jj],
            data=-lam_d * at(g2, xd) / (lam_d + mu_d)))

    return kuu, kuv, kvu, kvv


def _observer_groups(params: SystemParams, grid: SpatialGrid,
                     maps: TransportMaps):
    x, n = grid.nodes, grid.n_cells
    lam, mu = params.lam, params.mu
    g1, g2 = params.gamma1, params.gamma2
    phi1, phi2 = maps.phi1, maps.phi2
    psi = phi1 + phi2

    def at(arr, s):
        return np.interp(s, x, arr)

    puu, puv, pvu, pvv = [], [], [], []

    # puu, pvv: data on the x = 0 edge; the coupling coefficients of the
    # observer family are evaluated at the x-coordinate of the path.
    t01 = {}
    for i in range(n + 1):
        jj = np.arange(i, n + 1)
        ii = np.full(jj.shape, i)
        P = i + 2
        t = t01.setdefault(P, np.linspace(0.0, 1.0, P))
        tw = _trapw(P)

        c = phi1[jj] - phi1[i]
        a = np.interp(c, phi1, x)
        span = x[jj] - a
        S = a[:, None] + span[:, None] * t[None, :]
        X = np.interp(np.interp(S, x, phi1) - c[:, None], phi1, x)
        puu.append(_PathGroup(
            ii=ii, jj=jj, X=X, S=S,
            W=tw[None, :] * span[:, None] * at(g1, X),
            denom=lam[jj],
            foot_scale=params.q * at(lam, a),
            foot_x=np.zeros(jj.shape), foot_s=a))

        c = phi2[jj] - phi2[i]
        a = np.interp(c, phi2, x)
        span = x[jj] - a
        S = a[:, None] + span[:, None] * t[None, :]
        X = np.interp(np.interp(S, x, phi2) - c[:, None], phi2, x)
        pvv.append(_PathGroup(
            ii=ii, jj=jj, X=X, S=S,
            W=-tw[None, :] * span[:, None] * at(g2, X),
            denom=mu[jj],
            foot_scale=at(mu, a) / params.q,
            foot_x=np.zeros(jj.shape), foot_s=a))

    # puv, pvu: data on the diagonal.
    for d in range(n + 1):
        ii = np.arange(0, n + 1 - d)
        jj = ii + d
        P = d + 2
        t = t01.setdefault(P, np.linspace(0.0, 1.0, P))
        tw = _trapw(P)

        c = phi1[ii] + phi2[jj]
        xd = np.interp(c, psi, x)
        span = x[jj] - xd
        S = xd[:, None] + span[:, None] * t[None, :]
        X = np.interp(c[:, None] - np.interp(S, x, phi2), phi1, x)
        lam_d, mu_d = at(lam, xd), at(mu, xd)
        puv.append(_PathGroup(
            ii=ii, jj=jj, X=X, S=S,
            W=-tw[None, :] * span[:, None] * at(g1, X),
            denom=mu[jj],
            data=mu_d * at(g1, xd) / (lam_d + mu_d)))

        c = phi2[ii] + phi1[jj]
        xd = np.interp(c, psi, x)
        span = x[jj] - xd
        S = xd[:, None] + span[:, None] * t[None, :]
        X = np.interp(c[:, None] - np.interp(S, x, phi1), phi2, x)
        lam_d, mu_d = at(lam, xd), at(mu, xd)
        pvu.append(_PathGroup(
            ii=ii, jj=jj, X=X, S=S,
            W=tw[None, :] * span[:, None] * at(g2, X),
            denom=lam[jj],
            data=-lam_d * at(g2, xd) / (lam_d + mu_d)))

    return puu, puv, pvu, pvv


def solve_control_kernels(params: SystemParams, grid: SpatialGrid,
                          maps: TransportMaps | None = None,
                          tol: float = _DEFAULT_TOL,
                          max_iter: int = _DEFAULT_MAX_ITER) -> KernelSet:
    """Solve the controller kernel system on the lower triangle.

    The four kernels split into two closed pairs, (kuu, kuv) and
    (kvu, kvv), each solved by successive approximation along
    characteristics until the sup-norm update drops below `tol`.
    """
    if params.q == 0.0:
        raise ParameterError("distal reflection q must be nonzero")
    if maps is None:
        maps = build_transport_maps(params, grid)
    g_kuu, g_kuv, g_kvu, g_kvv = _controller_groups(params, grid, maps)
    n, h = grid.n_cells, grid.h
    kuv, kuu, it1, hist1 = _solve_pair(g_kuv, g_kuu, n, h, True, tol,
                                       max_iter, "controller (kuu,kuv)")
    kvu, kvv, it2, hist2 = _solve_pair(g_kvu, g_kvv, n, h, True, tol,
                                       max_iter, "controller (kvu,kvv)")
    upd = max(hist1[-1], hist2[-1])
    mk = lambda v: TriangularField(values=v, lower=True)
    return KernelSet(kuu=mk(kuu), kuv=mk(kuv), kvu=mk(kvu), kvv=mk(kvv),
                     iterations=max(it1, it2), final_update=upd)


def solve_observer_kernels(params: SystemParams, grid: SpatialGrid,
                           maps: TransportMaps | None = None,
                           tol: float = _DEFAULT_TOL,
                           max_iter: int = _DEFAULT_MAX_ITER) -> ObserverKernelSet:
    """Solve the observer kernel system on the upper triangle.

    Analogous to `solve_control_kernels` with pairs (puu, pvu) and
    (puv, pvv). Gains are attached separately by `observer_gains`, since
    they depend on the measurement-trust blend epsilon.
    """
    if params.q == 0.0:
        raise ParameterError("distal reflection q must be nonzero")
    if maps is None:
        maps = build_transport_maps(params, grid)
    g_puu, g_puv, g_pvu, g_pvv = _observer_groups(params, grid, maps)
    n, h = grid.n_cells, grid.h
    pvu, puu, it1, hist1 = _solve_pair(g_pvu, g_puu, n, h, False, tol,
                                       max_iter, "observer (puu,pvu)")
    puv, pvv, it2, hist2 = _solve_pair(g_puv, g_pvv, n, h, False, tol,
                                       max_iter, "observer (puv,pvv)")
    upd = max(hist1[-1], hist2[-1])
    mk = lambda v: TriangularField(values=v, lower=False)
    return ObserverKernelSet(puu=mk(puu), puv=mk(puv), pvu=mk(pvu),
                             pvv=mk(pvv), iterations=max(it1, it2),
                             final_update=upd)


def observer_gains(pset: ObserverKernelSet, params: SystemParams,
                   epsilon: float) -> ObserverKernelSet:
    """Attach the output-injection gains, read pointwise from the kernel
    traces at xi = 1 and blended by epsilon."""
    if not 0.0 <= epsilon <= 1.0:
        raise ParameterError("epsilon must lie in [0, 1]")
    lam, mu = params.lam, params.mu
    blend = params.rho * (1.0 - epsilon)
    pplus = -lam * pset.puu.values[:, -1] + mu * blend * pset.puv.values[:, -1]
    pminus = -lam * pset.pvu.values[:, -1] + mu * blend * pset.pvv.values[:, -1]
    return replace(pset, pplus=pplus, pminus=pminus, epsilon=float(epsilon))


# ---------------------------------------------------------------------------
# inverse kernels by Volterra reciprocity
# ---------------------------------------------------------------------------


def _block_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n1 = a.shape[0]
    big_a = a.transpose(0, 2, 1, 3).reshape(2 * n1, 2 * n1)
    big_b = b.transpose(0, 2, 1, 3).reshape(2 * n1, 2 * n1)
    out = big_a @ big_b
    return out.reshape(n1, 2, n1, 2).transpose(0, 2, 1, 3)


def _solve_reciprocity(k11, k12, k21, k22, grid: SpatialGrid, lower: bool,
                       tol: float, max_iter: int, label: str):
    """Solve L = K + integral(L K) for the 2x2 matrix kernel L.

    For the lower orientation the integral runs over [zeta, x], for the
    upper one over [x, zeta]. Discretized with the trapezoid rule, the
    interval restriction is automatic once both factors are zeroed
    outside their triangle; only the two half-weight endpoint corrections
    need explicit terms.
    """
    n1 = grid.n_cells + 1
    h = grid.h
    K = np.zeros((n1, n1, 2, 2))
    K[:, :, 0, 0] = k11
    K[:, :, 0, 1] = k12
    K[:, :, 1, 0] = k21
    K[:, :, 1, 1] = k22
    tri = np.tril(np.ones((n1, n1))) if lower else np.triu(np.ones((n1, n1)))
    K *= tri[:, :, None, None]
    idx = np.arange(n1)
    diag_k = K[idx, idx]
    L = K.copy()
    history = []
    for it in range(1, max_iter + 1):
        full = _block_matmul(L, K)
        c1 = np.einsum("ijab,jbc->ijac", L, diag_k)
        c2 = np.einsum("iab,ijbc->ijac", L[idx, idx], K)
        L_new = K + h * full - 0.5 * h * (c1 + c2)
        L_new *= tri[:, :, None, None]
        upd = float(np.max(np.abs(L_new - L)))
        history.append(upd)
        L = L_new
        if upd < tol:
            return L, it, history
    raise SolverError(f"{label} reciprocity iteration did not contract "
                      f"to {tol:g} in {max_iter} sweeps", history)


def solve_inverse_kernels(kernels: KernelSet, grid: SpatialGrid,
                          tol: float = _DEFAULT_TOL,
                          max_iter: int = _DEFAULT_MAX_ITER) -> InverseKernelSet:
    """Inverse kernels from the direct ones, so the round trip holds by
    construction up to quadrature error."""
    L, it, hist = _solve_reciprocity(
        kernels.kuu.values, kernels.kuv.values,
        kernels.kvu.values, kernels.kvv.values,
        grid, lower=True, tol=tol, max_iter=max_iter, label="inverse")
    mk = lambda v: TriangularField(values=np.ascontiguousarray(v), lower=True)
    return InverseKernelSet(laa=mk(L[:, :, 0, 0]), lab=mk(L[:, :, 0, 1]),
                            lba=mk(L[:, :, 1, 0]), lbb=mk(L[:, :, 1, 1]),
                            iterations=it, final_update=hist[-1])


def solve_observer_inverse(pset: ObserverKernelSet, grid: SpatialGrid,
                           tol: float = _DEFAULT_TOL,
                           max_iter: int = _DEFAULT_MAX_ITER):
    """Inverse of the observer transform, as four upper TriangularFields
    (quu, quv, qvu, qvv). Maps physical observer errors back to the
    uncoupled error-target variables."""
    Q, it, hist = _solve_reciprocity(
        pset.puu.values, pset.puv.values, pset.pvu.values, pset.pvv.values,
        grid, lower=False, tol=tol, max_iter=max_iter, label="observer inverse")
    mk = lambda v: TriangularField(values=np.ascontiguousarray(v), lower=False)
    return (mk(Q[:, :, 0, 0]), mk(Q[:, :, 0, 1]),
            mk(Q[:, :, 1, 0]), mk(Q[:, :, 1, 1]))


# ---------------------------------------------------------------------------
# integral-action weights
# ---------------------------------------------------------------------------


def full_interval_weights(grid: SpatialGrid) -> np.ndarray:
    """Trapezoid weights for integrals over the whole of [0, 1]."""
    w = np.full(grid.n_cells + 1, grid.h)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def check_assumption3(lset: InverseKernelSet, q: float,
                      grid: SpatialGrid) -> float:
    """The solvability quantity 1 + int laa(1,.) + (1/q) int lab(1,.).

    The caller rejects configurations whose value is below the noise
    threshold; the sign is unreliable there.
    """
    w = full_interval_weights(grid)
    laa_row = lset.laa.values[-1]
    lab_row = lset.lab.values[-1]
    return float(1.0 + w @ laa_row + (w @ lab_row) / q)


def solve_integral_weights(lset: InverseKernelSet, params: SystemParams,
                           grid: SpatialGrid,
                           threshold: float = 1e-6) -> IntegralWeights:
    """Integrate the weight ODEs: l2 backward from l2(1) = 0, then l1
    forward from its reflection-matched value at x = 0."""
    value = check_assumption3(lset, params.q, grid)
    if abs(value) < threshold:
        raise AssumptionError(
            f"integral-weight solvability quantity {value:.3e} is below "
            f"the rejection threshold {threshold:g}")
    laa_row = lset.laa.values[-1]
    lab_row = lset.lab.values[-1]
    cum_lab = _cumtrapz(lab_row, grid.h)
    l2 = (cum_lab[-1] - cum_lab) / params.mu
    l1 = (params.mu[0] * l2[0] / params.q + _cumtrapz(laa_row, grid.h)) / params.lam
    bf = float(1.0 + l1[-1] * params.lam[-1])
    return IntegralWeights(l1=l1, l2=l2, boundary_factor=bf)


def _cumtrapz(f: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(f)
    out[0] = 0.0
    np.cumsum((f[1:] + f[:-1]) * (0.5 * h), out=out[1:])
    return out


# ---------------------------------------------------------------------------
# Volterra transforms
# ---------------------------------------------------------------------------


def interval_weights(grid: SpatialGrid, lower: bool) -> np.ndarray:
    """Row i holds trapezoid weights for [0, x_i] (lower) or [x_i, 1]."""
    n = grid.n_cells
    h = grid.h
    w = np.zeros((n + 1, n + 1))
    if lower:
        for i in range(1, n + 1):
            w[i, 1:i] = h
            w[i, 0] = 0.5 * h
            w[i, i] = 0.5 * h
    else:
        for i in range(n):
            w[i, i + 1:n] = h
            w[i, i] = 0.5 * h
            w[i, n] = 0.5 * h
    return w


class TransformOperator:
    """Precomputed nodal form of a 2x2 Volterra transform,

        (f, g) -> (f + sign * (W k11) f + sign * (W k12) g, ...),

    where W holds per-row trapezoid weights over the kernel triangle.
    sign = -1 gives the direct transforms, sign = +1 the inverses.
    """

    def __init__(self, k11: TriangularField, k12: TriangularField,
                 k21: TriangularField, k22: TriangularField,
                 grid: SpatialGrid, sign: float):
        w = interval_weights(grid, k11.lower)
        self.m11 = sign * w * k11.values
        self.m12 = sign * w * k12.values
        self.m21 = sign * w * k21.values
        self.m22 = sign * w * k22.values

    def __call__(self, f: np.ndarray, g: np.ndarray):
        return (f + self.m11 @ f + self.m12 @ g,
                g + self.m21 @ f + self.m22 @ g)


def apply_transform(u: np.ndarray, v: np.ndarray, kernels: KernelSet,
                    grid: SpatialGrid):
    """Map plant fields (u, v) to the target fields (alpha, beta)."""
    op = TransformOperator(kernels.kuu, kernels.kuv, kernels.kvu,
                           kernels.kvv, grid, sign=-1.0)
    return op(u, v)


def apply_inverse(alpha: np.ndarray, beta: np.ndarray,
                  lset: InverseKernelSet, grid: SpatialGrid):
    """Map target fields (alpha, beta) back to plant fields (u, v)."""
    op = TransformOperator(lset.laa, lset.lab, lset.lba, lset.lbb,
                           grid, sign=1.0)
    return op(alpha, beta)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def write_kernels_csv(fields: dict, grid: SpatialGrid, out_dir) -> list:
    """Write each kernel as a flat CSV table (x, xi, value), in-triangle
    nodes only. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x = grid.nodes
    written = []
    for name, fld in fields.items():
        path = out_dir / f"{name}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,xi,value\n")
            vals = fld.values
            n = grid.n_cells
            for i in range(n + 1):
                js = range(0, i + 1) if fld.lower else range(i, n + 1)
                for j in js:
                    fh.write(f"{x[i]:.17g},{x[j]:.17g},{vals[i, j]:.17g}\n")
        written.append(path)
    return written
