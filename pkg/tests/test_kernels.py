import numpy as np
import pytest

from hypbc import (SpatialGrid, SystemParams, apply_inverse, apply_transform,
                   check_assumption3, observer_gains, solve_control_kernels,
                   solve_integral_weights, solve_inverse_kernels,
                   solve_observer_kernels)
from hypbc.errors import AssumptionError, ParameterError
from hypbc.kernels import (InverseKernelSet, KernelSet, TriangularField,
                           full_interval_weights, write_kernels_csv)

from conftest import make_stack


def test_zero_coupling_gives_zero_kernels():
    st = make_stack(60, gamma1=0.0, gamma2=0.0)
    for f in st.kernels.fields().values():
        assert np.max(np.abs(f.values)) == 0.0
    for f in st.okernels.fields().values():
        assert np.max(np.abs(f.values)) == 0.0
    for f in st.lset.fields().values():
        assert np.max(np.abs(f.values)) == 0.0


def common_node_diff(coarse, fine):
    """sup difference on the shared nodes of grids n and 2n."""
    worst = 0.0
    for name in coarse.fields():
        a = coarse.fields()[name].values
        b = fine.fields()[name].values[::2, ::2]
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


@pytest.mark.parametrize("solver", ["control", "observer"])
def test_kernel_self_convergence_order_one(solver):
    stacks = [make_stack(n, observer=(solver == "observer"))
              for n in (40, 80, 160)]
    sets = [getattr(s, "kernels" if solver == "control" else "okernels")
            for s in stacks]
    e1 = common_node_diff(sets[0], sets[1])
    e2 = common_node_diff(sets[1], sets[2])
    order = np.log2(e1 / e2)
    assert order > 0.9, f"observed order {order:.2f} (e1={e1:.2e}, e2={e2:.2e})"


def test_diagonal_data_exact(stack100):
    p = stack100.params
    k = stack100.kernels
    target = p.gamma1 / (p.lam + p.mu)
    assert np.max(np.abs(np.diag(k.kuv.values) - target)) < 1e-14
    target = -p.gamma2 / (p.lam + p.mu)
    assert np.max(np.abs(np.diag(k.kvu.values) - target)) < 1e-14


def test_transform_identity_for_zero_kernels():
    st = make_stack(50, gamma1=0.0, gamma2=0.0, observer=False)
    rng = np.random.default_rng(0)
    u, v = rng.uniform(-1, 1, (2, 51))
    a, b = apply_transform(u, v, st.kernels, st.grid)
    assert np.array_equal(a, u) and np.array_equal(b, v)
    u2, v2 = apply_inverse(a, b, st.lset, st.grid)
    assert np.max(np.abs(u2 - u)) == 0.0


def test_round_trip_order(stack100):
    """Round trip error shrinks at least first order under refinement."""
    errs = []
    for n in (50, 100):
        st = make_stack(n, observer=False)
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(5):
            u, v = rng.uniform(-1, 1, (2, n + 1))
            a, b = apply_transform(u, v, st.kernels, st.grid)
            u2, v2 = apply_inverse(a, b, st.lset, st.grid)
            worst = max(worst, np.max(np.abs(u2 - u)), np.max(np.abs(v2 - v)))
        errs.append(worst)
    assert errs[0] < 5.0 / 50
    assert errs[1] < errs[0]


def random_kernel_set(n, seed) -> KernelSet:
    rng = np.random.default_rng(seed)
    tri = np.tril(np.ones((n + 1, n + 1)))

    def mk():
        return TriangularField(values=rng.uniform(-0.5, 0.5,
                                                  (n + 1, n + 1)) * tri,
                               lower=True)

    return KernelSet(kuu=mk(), kuv=mk(), kvu=mk(), kvv=mk())


@pytest.mark.parametrize("n", [60, 120])
def test_reciprocity_round_trip_random_kernels(n):
    """The inverse solved from the reciprocity relation round-trips any
    bounded kernel set, not just solved ones."""
    grid = SpatialGrid.make(n)
    kern = random_kernel_set(n, seed=7)
    lset = solve_inverse_kernels(kern, grid)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(5):
        u, v = rng.uniform(-1, 1, (2, n + 1))
        a, b = apply_transform(u, v, kern, grid)
        u2, v2 = apply_inverse(a, b, lset, grid)
        worst = max(worst, np.max(np.abs(u2 - u)), np.max(np.abs(v2 - v)))
    assert worst < 1.5 / n


def test_reciprocity_error_halves():
    errs = {}
    for n in (60, 120):
        grid = SpatialGrid.make(n)
        kern = random_kernel_set(n, seed=7)
        lset = solve_inverse_kernels(kern, grid)
        rng = np.random.default_rng(9)
        u, v = rng.uniform(-1, 1, (2, n + 1))
        a, b = apply_transform(u, v, kern, grid)
        u2, v2 = apply_inverse(a, b, lset, grid)
        errs[n] = max(np.max(np.abs(u2 - u)), np.max(np.abs(v2 - v)))
    assert errs[120] < 0.75 * errs[60]


def test_integral_weights_zero_for_identity():
    st = make_stack(50, gamma1=0.0, gamma2=0.0, observer=False)
    assert np.max(np.abs(st.weights.l1)) == 0.0
    assert np.max(np.abs(st.weights.l2)) == 0.0
    assert st.weights.boundary_factor == pytest.approx(1.0)
    assert check_assumption3(st.lset, st.params.q, st.grid) == pytest.approx(1.0)


def test_weight_boundary_conditions(stack100):
    w = stack100.weights
    p = stack100.params
    assert w.l2[-1] == pytest.approx(0.0, abs=1e-15)
    assert w.l1[0] == pytest.approx(p.mu[0] * w.l2[0] / (p.q * p.lam[0]),
                                    rel=1e-12)


def test_boundary_factor_matches_assumption3(stack100, stack100_var):
    for st in (stack100, stack100_var):
        val = check_assumption3(st.lset, st.params.q, st.grid)
        assert abs(val - st.weights.boundary_factor) < 10 * st.grid.h


def test_assumption3_linear_in_inverse_reflection(stack100):
    st = stack100
    wf = full_interval_weights(st.grid)
    i_aa = float(wf @ st.lset.laa.values[-1])
    i_ab = float(wf @ st.lset.lab.values[-1])
    v_pos = check_assumption3(st.lset, st.params.q, st.grid)
    v_neg = check_assumption3(st.lset, -st.params.q, st.grid)
    assert v_pos == pytest.approx(1 + i_aa + i_ab / st.params.q)
    assert v_neg == pytest.approx(1 + i_aa - i_ab / st.params.q)


def test_weights_refine_at_order_one():
    sets = {n: make_stack(n, observer=False).weights for n in (50, 100, 200)}
    e1 = np.max(np.abs(sets[50].l1 - sets[100].l1[::2]))
    e2 = np.max(np.abs(sets[100].l1 - sets[200].l1[::2]))
    assert np.log2(e1 / e2) > 0.9


def test_degenerate_assumption3_rejected():
    grid = SpatialGrid.make(30)
    tri = np.tril(np.ones((31, 31)))
    # laa row at x=1 integrating to -1 cancels the leading 1
    vals = np.zeros((31, 31))
    vals[-1, :] = -1.0
    laa = TriangularField(values=vals * tri, lower=True)
    zero = TriangularField(values=np.zeros((31, 31)), lower=True)
    lset = InverseKernelSet(laa=laa, lab=zero, lba=zero, lbb=zero)
    params = SystemParams.from_coefficients(grid, 1.0, 1.0, 0.0, 0.0,
                                            q=1.0, rho=0.0)
    with pytest.raises(AssumptionError):
        solve_integral_weights(lset, params, grid)


def test_observer_gains_formulas(stack100):
    st = stack100
    zeroed = make_stack(40, gamma1=0.0, gamma2=0.0)
    ok0 = observer_gains(zeroed.okernels, zeroed.params, 0.7)
    assert np.max(np.abs(ok0.pplus)) == 0.0
    assert np.max(np.abs(ok0.pminus)) == 0.0

    ok1 = observer_gains(st.okernels, st.params, 1.0)
    expect = -st.params.lam * st.okernels.puu.values[:, -1]
    assert np.max(np.abs(ok1.pplus - expect)) == 0.0

    eps = 0.37
    ok = observer_gains(st.okernels, st.params, eps)
    blend = st.params.rho * (1 - eps)
    for i in (0, 17, 64, 100):
        manual = (-st.params.lam[i] * st.okernels.puu.values[i, -1]
                  + st.params.mu[i] * blend * st.okernels.puv.values[i, -1])
        assert ok.pplus[i] == pytest.approx(manual, rel=1e-14)
        manual = (-st.params.lam[i] * st.okernels.pvu.values[i, -1]
                  + st.params.mu[i] * blend * st.okernels.pvv.values[i, -1])
        assert ok.pminus[i] == pytest.approx(manual, rel=1e-14)
    with pytest.raises(ParameterError):
        observer_gains(st.okernels, st.params, 1.2)


def test_triangular_interp_matches_nodes(stack100):
    f = stack100.kernels.kuu
    n = stack100.grid.n_cells
    ii = np.array([10, 40, 77])
    jj = np.array([3, 20, 60])
    x = stack100.grid.nodes
    vals = f.interp(x[ii], x[jj])
    assert np.max(np.abs(vals - f.values[ii, jj])) < 1e-12


def test_kernels_csv_export(tmp_path, stack100):
    paths = write_kernels_csv({"kuu": stack100.kernels.kuu},
                              stack100.grid, tmp_path)
    text = paths[0].read_text().splitlines()
    assert text[0] == "x,xi,value"
    n = stack100.grid.n_cells
    assert len(text) - 1 == (n + 1) * (n + 2) // 2


def test_solver_error_carries_residual_history(stack100):
    from hypbc.errors import SolverError
    grid = SpatialGrid.make(40)
    params = SystemParams.from_coefficients(grid, 1.0, 1.0, 0.5, 0.5,
                                            q=0.8, rho=0.3)
    with pytest.raises(SolverError) as exc:
        solve_control_kernels(params, grid, max_iter=2)
    assert len(exc.value.residual_history) == 2
    with pytest.raises(SolverError):
        solve_observer_kernels(params, grid, max_iter=1)
