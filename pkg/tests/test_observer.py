import numpy as np
import pytest

from hypbc import (ControlConfig, DisturbanceSet, ObserverState,
                   SpatialGrid, build_transport_maps, epsilon_interval,
                   error_forcing_profiles, error_forcing_residuals,
                   iss_constants, iss_envelope_check, observer_gains,
                   step_observer)
from hypbc import signals as sig
from hypbc.errors import ConfigurationError
from hypbc.observer import observer_step_arrays
from hypbc.plant import ClosedLoopSetup, SimConfig, run_closed_loop

from conftest import make_stack


def gains_for(st, eps):
    return observer_gains(st.okernels, st.params, eps)


def test_epsilon_interval_examples():
    grid = SpatialGrid.make(10)
    from hypbc import SystemParams
    p = SystemParams.from_coefficients(grid, 1, 1, 0, 0, q=1.0, rho=0.5)
    iv = epsilon_interval(p)
    assert iv.lower == pytest.approx(-1.0)
    assert iv.low == 0.0 and iv.high == 1.0
    assert iv.contains(0.0) and iv.contains(1.0)

    p = SystemParams.from_coefficients(grid, 1, 1, 0, 0, q=1.0, rho=-2.0)
    iv = epsilon_interval(p)
    assert iv.lower == pytest.approx(0.5)
    assert not iv.contains(0.5) and iv.contains(0.51)
    assert iv.auto() == pytest.approx(0.75)

    p = SystemParams.from_coefficients(grid, 1, 1, 0, 0, q=1.0, rho=0.0)
    iv = epsilon_interval(p)
    assert iv.lower == -np.inf and iv.low == 0.0
    assert iv.contains(0.0)


def test_matched_observer_stays_matched(stack100):
    """Exact initial match with no disturbances or noise keeps the error
    at machine zero: the observer runs the same dynamics."""
    st = stack100
    okern = gains_for(st, 0.6)
    x = st.grid.nodes
    u = np.sin(np.pi * x)
    v = 0.4 * np.cos(np.pi * x)
    from hypbc.plant import _plant_step_arrays
    uh, vh = u.copy(), v.copy()
    dist = DisturbanceSet.none(st.grid)
    dt = st.grid.h
    for k in range(200):
        u_ctl = 0.3 * np.sin(k * dt)  # arbitrary input, shared
        y_m = u[-1]
        u, v = _plant_step_arrays(u, v, k * dt, st.params, dist, u_ctl, dt,
                                  st.grid.h, "upwind")
        uh, vh = observer_step_arrays(uh, vh, y_m, u_ctl, st.params, okern,
                                      dt, st.grid.h, y_m_bc=u[-1])
    assert np.max(np.abs(u - uh)) < 1e-13
    assert np.max(np.abs(v - vh)) < 1e-13


def test_error_independent_of_input(stack100):
    """The observer error does not depend on the applied input: two runs
    with different inputs but identical disturbances and noise produce
    identical error traces."""
    st = stack100
    okern = gains_for(st, 0.5)
    x = st.grid.nodes
    rng = np.random.default_rng(2)
    dist = DisturbanceSet(d1=sig.Sinusoid(0.3, 1.1), d2=sig.Constant(0.2),
                          d3=sig.Sinusoid(0.2, 0.7), d4=sig.Constant(0.1),
                          m1=np.ones(x.size), m2=np.ones(x.size),
                          n=sig.UniformNoise(0.05, seed=11, hold=0.02))
    from hypbc.plant import _plant_step_arrays

    def run(u_of_t):
        u = np.sin(np.pi * x)
        v = np.zeros(x.size)
        uh = 0.3 * np.cos(np.pi * x)
        vh = np.zeros(x.size)
        errs = []
        dt = st.grid.h
        for k in range(150):
            t = k * dt
            y_m = u[-1] + float(dist.n(t))
            u_ctl = u_of_t(t)
            u, v = _plant_step_arrays(u, v, t, st.params, dist, u_ctl, dt,
                                      st.grid.h, "upwind")
            y_m_next = u[-1] + float(dist.n(t + dt))
            uh, vh = observer_step_arrays(uh, vh, y_m, u_ctl, st.params,
                                          okern, dt, st.grid.h,
                                          y_m_bc=y_m_next)
            errs.append(np.concatenate([u - uh, v - vh]))
        return np.array(errs)

    e1 = run(lambda t: 0.0)
    e2 = run(lambda t: np.sin(3.0 * t))
    assert np.max(np.abs(e1 - e2)) < 1e-12


def test_finite_time_convergence_at_full_trust():
    """At epsilon = 1 with clean measurements the error is wiped out
    after one loop delay, up to first-order scheme error."""
    st = make_stack(100)
    okern = gains_for(st, 1.0)
    x = st.grid.nodes
    uh = 0.7 * np.sin(np.pi * x)
    vh = 0.5 * np.exp(-((x - 0.5) / 0.12) ** 2)
    init = max(np.abs(uh).max(), np.abs(vh).max())
    dt = st.grid.h
    t_star = st.maps.tau + 5 * dt
    state = ObserverState(uhat=uh, vhat=vh, t=0.0)
    cfg = ControlConfig(rho_tilde=0.0, k_I=0.0, epsilon=1.0)
    while state.t < t_star - dt / 2:
        state = step_observer(state, 0.0, 0.0, okern, st.params, cfg, dt,
                              st.grid)
    err = max(np.abs(state.uhat).max(), np.abs(state.vhat).max())
    assert err < 2e-2 * init


def test_epsilon_threshold_flips_ideal_error():
    st = make_stack(80, q=1.0, rho=-2.0)
    x = st.grid.nodes
    ratios = {}
    for eps in (0.25, 0.75):
        okern = gains_for(st, eps)
        uh = 0.5 * np.sin(np.pi * x)
        vh = 0.3 * np.sin(np.pi * x)
        dt = st.grid.h
        m = int(round(st.maps.tau / dt))
        sups = []
        for w in range(10):
            s = 0.0
            for _ in range(m):
                uh, vh = observer_step_arrays(uh, vh, 0.0, 0.0, st.params,
                                              okern, dt, st.grid.h)
                s = max(s, np.abs(uh).max(), np.abs(vh).max())
            sups.append(s)
        ratios[eps] = sups[-1] / sups[-2]
    assert ratios[0.25] > 1.05
    assert ratios[0.75] < 0.95


def test_step_observer_requires_gains(stack100):
    state = ObserverState(uhat=np.zeros(101), vhat=np.zeros(101), t=0.0)
    cfg = ControlConfig(rho_tilde=0.0, k_I=0.0, epsilon=0.5)
    with pytest.raises(ConfigurationError):
        step_observer(state, 0.0, 0.0, stack100.okernels, stack100.params,
                      cfg, stack100.grid.h, stack100.grid)


def test_error_forcing_profiles_collapse():
    st = make_stack(60, gamma1=0.0, gamma2=0.0)
    okern = gains_for(st, 0.4)
    x = st.grid.nodes
    m1 = np.abs(np.sin(np.pi * x))
    m2 = 0.3 * np.ones(x.size)
    prof = error_forcing_profiles(okern, st.params, m1, m2, 0.4, st.grid)
    assert np.max(np.abs(prof.f2 - m1)) == 0.0
    assert np.max(np.abs(prof.g3 - m2)) == 0.0
    for arr in (prof.f1, prof.f3, prof.f4, prof.g1, prof.g2, prof.g4):
        assert np.max(np.abs(arr)) == 0.0


def test_error_forcing_substitute_back(stack100):
    st = stack100
    eps = 0.45
    okern = gains_for(st, eps)
    x = st.grid.nodes
    m1 = np.abs(np.sin(np.pi * x))
    m2 = 0.5 * np.ones(x.size)
    prof = error_forcing_profiles(okern, st.params, m1, m2, eps, st.grid)
    res = error_forcing_residuals(prof, okern, st.params, m1, m2, eps,
                                  st.grid)
    assert np.max(res) < 1e-9


def test_error_forcing_linear_in_profiles(stack100):
    st = stack100
    eps = 0.45
    okern = gains_for(st, eps)
    x = st.grid.nodes
    m1 = np.abs(np.sin(np.pi * x))
    m2 = 0.5 + 0.1 * x
    p1 = error_forcing_profiles(okern, st.params, m1, m2, eps, st.grid)
    p2 = error_forcing_profiles(okern, st.params, 2 * m1, 2 * m2, eps,
                                st.grid)
    # the disturbance-profile channels scale with (m1, m2)
    for a, b in ((p2.f2, p1.f2), (p2.g2, p1.g2), (p2.f3, p1.f3),
                 (p2.g3, p1.g3)):
        assert np.max(np.abs(a - 2 * b)) < 1e-9
    # the noise and boundary channels do not involve (m1, m2) at all
    for a, b in ((p2.f1, p1.f1), (p2.g1, p1.g1), (p2.f4, p1.f4),
                 (p2.g4, p1.g4)):
        assert np.max(np.abs(a - b)) < 1e-12


def test_iss_constants_examples():
    grid = SpatialGrid.make(10)
    from hypbc import SystemParams
    p = SystemParams.from_coefficients(grid, 1, 1, 0, 0, q=1.0, rho=0.5)
    maps = build_transport_maps(p, grid)
    c = iss_constants(p, ControlConfig(0.0, 0.0, epsilon=1.0), maps)
    assert c.C == pytest.approx(3.0)
    assert np.isinf(c.nu)
    c = iss_constants(p, ControlConfig(0.0, 0.0, epsilon=0.5), maps)
    assert c.C == pytest.approx(3.25)
    assert c.nu == pytest.approx(np.log(4.0) / 2.0)
    p = SystemParams.from_coefficients(grid, 1, 1, 0, 0, q=1.0, rho=-2.0)
    with pytest.raises(ConfigurationError):
        iss_constants(p, ControlConfig(0.0, 0.0, epsilon=0.4), maps)


def test_envelope_trivial_and_decay():
    # zero inputs, zero initial error
    consts_grid = SpatialGrid.make(10)
    from hypbc import SystemParams
    p = SystemParams.from_coefficients(consts_grid, 1, 1, 0, 0, q=1.0,
                                       rho=0.5)
    maps = build_transport_maps(p, consts_grid)
    c = iss_constants(p, ControlConfig(0.0, 0.0, epsilon=0.5), maps)
    t = np.linspace(0, 10, 101)
    rep = iss_envelope_check(t, np.zeros(101), c, 0.0)
    assert rep.passed

    # zero inputs, nonzero initial error: decay below C exp(-nu t) X
    st = make_stack(100, q=1.0, rho=0.8)
    eps = 0.5
    okern = gains_for(st, eps)
    cfg = ControlConfig(0.0, 0.0, epsilon=eps)
    x = st.grid.nodes
    z = np.zeros(x.size)
    setup = ClosedLoopSetup(
        grid=st.grid, params=st.params, maps=st.maps,
        dist=DisturbanceSet.none(st.grid), config=cfg, mode="open",
        kernels=st.kernels, lset=st.lset, weights=st.weights,
        sim=SimConfig(dt=st.grid.h, horizon=8 * st.maps.tau),
        u0=z, v0=z.copy(), okernels=okern,
        uhat0=0.5 * np.sin(np.pi * x), vhat0=0.3 * np.sin(np.pi * x))
    tr = run_closed_loop(setup)
    consts = iss_constants(st.params, cfg, st.maps)
    rep = iss_envelope_check(tr.t, tr.obs_err_target, consts, 0.0)
    assert rep.passed, f"margin {rep.min_margin} at t={rep.worst_t}"


def test_envelope_noise_only(stack100):
    st = stack100
    eps = 0.5
    okern = gains_for(st, eps)
    cfg = ControlConfig(0.0, 0.0, epsilon=eps)
    x = st.grid.nodes
    z = np.zeros(x.size)
    noise = sig.UniformNoise(0.1, seed=21, hold=0.02)
    dist = DisturbanceSet(d1=sig.zero(), d2=sig.zero(), d3=sig.zero(),
                          d4=sig.zero(), m1=z, m2=z.copy(), n=noise)
    setup = ClosedLoopSetup(
        grid=st.grid, params=st.params, maps=st.maps, dist=dist,
        config=cfg, mode="open", kernels=st.kernels, lset=st.lset,
        weights=st.weights, sim=SimConfig(dt=st.grid.h,
                                          horizon=10 * st.maps.tau),
        u0=z, v0=z.copy(), okernels=okern, uhat0=z.copy(), vhat0=z.copy())
    tr = run_closed_loop(setup)
    consts = iss_constants(st.params, cfg, st.maps)
    rep = iss_envelope_check(tr.t, tr.obs_err_target, consts, 0.1)
    assert rep.passed
    # after the transient the error sits below the gain term alone
    late = tr.obs_err_target[tr.t > 2 * st.maps.tau]
    assert np.max(late) <= consts.h2(0.1)


def test_error_forcing_solver_error(stack100):
    from hypbc.errors import SolverError
    okern = gains_for(stack100, 0.5)
    x = stack100.grid.nodes
    with pytest.raises(SolverError):
        error_forcing_profiles(okern, stack100.params, np.ones(x.size),
                               np.ones(x.size), 0.5, stack100.grid,
                               max_iter=1)
