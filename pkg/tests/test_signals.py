import numpy as np
import pytest

from hypbc import signals as sig
from hypbc.errors import SignalError


def fd_check(s, t, tol=1e-6):
    d = 1e-5
    num1 = (s(t + d) - s(t - d)) / (2 * d)
    num2 = (s.derivative(t + d) - s.derivative(t - d)) / (2 * d)
    assert abs(num1 - s.derivative(t)) < tol
    assert abs(num2 - s.second_derivative(t)) < tol


def test_constant():
    c = sig.Constant(2.5)
    assert c(0.0) == 2.5 and c(17.3) == 2.5
    assert c.derivative(1.0) == 0.0 and c.second_derivative(1.0) == 0.0


@pytest.mark.parametrize("make,t", [
    (lambda: sig.Sinusoid(0.7, 1.3, 0.4, 0.1), 2.0),
    (lambda: sig.SmoothStep(2.0, t_on=0.5, rise=1.5), 1.1),
    (lambda: sig.RandomFourier(0.5, seed=11), 3.7),
])
def test_analytic_derivatives(make, t):
    fd_check(make(), t, tol=1e-5)


def test_random_fourier_bounded_and_deterministic():
    s1 = sig.RandomFourier(0.3, seed=5)
    s2 = sig.RandomFourier(0.3, seed=5)
    t = np.linspace(0, 50, 4001)
    assert np.array_equal(s1(t), s2(t))
    assert np.max(np.abs(s1(t))) <= 0.3 + 1e-12


def test_uniform_noise_deterministic_bounded_no_derivative():
    n1 = sig.UniformNoise(0.1, seed=9, hold=0.02)
    n2 = sig.UniformNoise(0.1, seed=9, hold=0.02)
    t = np.linspace(0, 30, 2111)
    a, b = n1(t), n2(t)
    assert np.array_equal(a, b)
    assert np.max(np.abs(a)) <= 0.1
    # order of evaluation must not matter
    n3 = sig.UniformNoise(0.1, seed=9, hold=0.02)
    late = n3(25.0)
    assert late == n1(25.0)
    with pytest.raises(SignalError):
        n1.derivative(1.0)


def test_samples_interpolation_and_slope():
    s = sig.Samples([0.0, 1.0, 3.0], [0.0, 2.0, 0.0])
    assert s(0.5) == pytest.approx(1.0)
    assert s(2.0) == pytest.approx(1.0)
    assert s.derivative(0.7) == pytest.approx(2.0)
    assert s.derivative(2.4) == pytest.approx(-1.0)
    with pytest.raises(SignalError):
        s.second_derivative(1.0)


def test_smoothstep_is_c2_at_ends():
    s = sig.SmoothStep(1.0, t_on=0.0, rise=1.0)
    assert s.derivative(0.0) == 0.0 and s.derivative(1.0) == 0.0
    assert s.second_derivative(0.0) == 0.0
    assert s.second_derivative(1.0) == pytest.approx(0.0, abs=1e-12)
    assert s(2.0) == pytest.approx(1.0)
