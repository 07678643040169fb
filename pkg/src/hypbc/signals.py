"""Deterministic time-signal generators for disturbances and noise.

Disturbance generators used as d1..d4 must expose analytic first and
second time derivatives, because the pseudo-steady state and the delay
equation forcing differentiate them. Measurement noise only needs to be
bounded and evaluable.
"""

from __future__ import annotations

import numpy as np

from .errors import SignalError

__all__ = [
    "TimeSignal",
    "Constant",
    "Sinusoid",
    "SmoothStep",
    "RandomFourier",
    "UniformNoise",
    "Samples",
    "zero",
]


class TimeSignal:
    """Scalar map t -> R for t >= 0, deterministic given its seed."""

    differentiable = False

    def __call__(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise SignalError(f"{type(self).__name__} has no first derivative")

    def second_derivative(self, t):
        raise SignalError(f"{type(self).__name__} has no second derivative")


class Constant(TimeSignal):
    differentiable = True

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, t):
        return self.value * np.ones_like(np.asarray(t, dtype=float))

    def derivative(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    second_derivative = derivative


class Sinusoid(TimeSignal):
    """amplitude * sin(omega * t + phase) + offset."""

    differentiable = True

    def __init__(self, amplitude: float, omega: float, phase: float = 0.0,
                 offset: float = 0.0):
        self.amplitude = float(amplitude)
        self.omega = float(omega)
        self.phase = float(phase)
        self.offset = float(offset)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.amplitude * np.sin(self.omega * t + self.phase) + self.offset

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return self.amplitude * self.omega * np.cos(self.omega * t + self.phase)

    def second_derivative(self, t):
        t = np.asarray(t, dtype=float)
        return -self.amplitude * self.omega ** 2 * np.sin(self.omega * t + self.phase)


class SmoothStep(TimeSignal):
    """C^2 ramp from 0 to `height` over [t_on, t_on + rise].

    Uses the quintic 6s^5 - 15s^4 + 10s^3, so both derivatives are
    continuous and vanish at the ends.
    """

    differentiable = True

    def __init__(self, height: float, t_on: float = 0.0, rise: float = 1.0):
        if rise <= 0:
            raise SignalError("rise must be positive")
        self.height = float(height)
        self.t_on = float(t_on)
        self.rise = float(rise)

    def _s(self, t):
        return np.clip((np.asarray(t, dtype=float) - self.t_on) / self.rise, 0.0, 1.0)

    def __call__(self, t):
        s = self._s(t)
        return self.height * (6 * s ** 5 - 15 * s ** 4 + 10 * s ** 3)

    def derivative(self, t):
        s = self._s(t)
        return self.height / self.rise * (30 * s ** 4 - 60 * s ** 3 + 30 * s ** 2)

    def second_derivative(self, t):
        s = self._s(t)
        return self.height / self.rise ** 2 * (120 * s ** 3 - 180 * s ** 2 + 60 * s)


class RandomFourier(TimeSignal):
    """Smooth seeded random signal: a sum of sinusoids with random
    frequencies and phases, normalized so sup |signal| <= amplitude."""

    differentiable = True

    def __init__(self, amplitude: float, seed: int, n_modes: int = 8,
                 omega_max: float = 3.0):
        rng = np.random.default_rng(seed)
        coeffs = rng.uniform(0.5, 1.0, size=n_modes)
        coeffs *= float(amplitude) / coeffs.sum()
        self._a = coeffs
        self._w = rng.uniform(0.2, omega_max, size=n_modes)
        self._p = rng.uniform(0.0, 2 * np.pi, size=n_modes)
        self.amplitude = float(amplitude)
        self.seed = int(seed)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        arg = np.multiply.outer(t, self._w) + self._p
        return np.sin(arg) @ self._a

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        arg = np.multiply.outer(t, self._w) + self._p
        return np.cos(arg) @ (self._a * self._w)

    def second_derivative(self, t):
        t = np.asarray(t, dtype=float)
        arg = np.multiply.outer(t, self._w) + self._p
        return -np.sin(arg) @ (self._a * self._w ** 2)


class UniformNoise(TimeSignal):
    """Bounded measurement noise: uniform samples in [-amplitude, amplitude]
    held constant over intervals of length `hold`.

    Values are drawn lazily from a single seeded stream, so evaluation is
    deterministic and independent of query order. No derivatives.
    """

    def __init__(self, amplitude: float, seed: int, hold: float = 0.01):
        if hold <= 0:
            raise SignalError("hold must be positive")
        self.amplitude = float(amplitude)
        self.seed = int(seed)
        self.hold = float(hold)
        self._rng = np.random.default_rng(seed)
        self._table = np.empty(0)

    def _ensure(self, kmax: int) -> None:
        if kmax >= self._table.size:
            grow = max(kmax + 1 - self._table.size, 1024)
            extra = self._rng.uniform(-self.amplitude, self.amplitude, size=grow)
            self._table = np.concatenate([self._table, extra])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.maximum(np.floor(t / self.hold).astype(np.int64), 0)
        self._ensure(int(k.max()) if k.size else 0)
        return self._table[k]


class Samples(TimeSignal):
    """Sample array with linear interpolation. First derivative is the
    piecewise slope; there is no second derivative."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise SignalError("times and values must be matching 1-D arrays")
        if np.any(np.diff(self.times) <= 0):
            raise SignalError("times must be strictly increasing")

    def __call__(self, t):
        return np.interp(np.asarray(t, dtype=float), self.times, self.values)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1,
                      0, self.times.size - 2)
        slopes = np.diff(self.values) / np.diff(self.times)
        return slopes[idx]


def zero() -> Constant:
    return Constant(0.0)
