"""Fixed-step time-stepping primitives.

Signals are taken to be zero before ``t0``; that single convention makes the
delayed terms and the clipped window ``[max(t0, t - T), t]`` agree.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class IntegrationFault(RuntimeError):
    def __init__(self, t: float, block: str, detail: str = "non-finite value"):
        super().__init__(f"{detail} in block '{block}' at t={t!r}")
        self.t = t
        self.block = block


def steps_for(duration: float, dt: float, what: str = "duration") -> int:
    """Integral number of ``dt`` steps in ``duration`` (to 1e-9 relative)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    ratio = duration / dt
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(ratio, 1.0):
        raise ValueError(f"{what}={duration!r} is not an integral multiple of dt={dt!r}")
    return n


@dataclass
class Clock:
    t0: float
    dt: float
    step_index: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def t(self) -> float:
        # recomputed from the index so no rounding accumulates
        return self.t0 + self.step_index * self.dt

    def tick(self) -> None:
        self.step_index += 1


def rk4_step(f, t: float, x: np.ndarray, dt: float, block: str = "state") -> np.ndarray:
    """One classical Runge-Kutta step of ``x' = f(t, x)``."""
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(f(t, x), dtype=float)
    k2 = np.asarray(f(t + 0.5 * dt, x + 0.5 * dt * k1), dtype=float)
    k3 = np.asarray(f(t + 0.5 * dt, x + 0.5 * dt * k2), dtype=float)
    k4 = np.asarray(f(t + dt, x + dt * k3), dtype=float)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise IntegrationFault(t, block)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class DelayLine:
    """Ring buffer returning the sample pushed exactly ``T/dt`` steps earlier."""

    def __init__(self, T: float, dt: float, dim: int):
        self.capacity = steps_for(T, dt, "delay T")
        self.dim = dim
        # one spare slot so read-before-push and read-after-push both work
        self._buf = np.zeros((self.capacity + 1, dim))
        self.count = 0

    def push(self, sample) -> None:
        self._buf[self.count % (self.capacity + 1)] = sample
        self.count += 1

    def read(self, now: Clock) -> np.ndarray:
        j = now.step_index - self.capacity
        if j < 0:
            return np.zeros(self.dim)
        if j >= self.count or j < self.count - self.capacity - 1:
            raise IndexError(f"sample for step {j} is not retained (pushed {self.count})")
        return self._buf[j % (self.capacity + 1)].copy()


class SlidingWindowIntegral:
    """``(1/T) * integral over [max(t0, t-T), t]`` of a fixed-step stream.

    A running trapezoidal integral minus its copy delayed by ``T``.  At start-up
    the window is clipped at ``t0`` but still divided by the full ``T``.
    """

    def __init__(self, T: float, dt: float, dim: int = 1):
        self.T = T
        self.dt = dt
        self._line = DelayLine(T, dt, dim)
        self._clock = Clock(0.0, dt)
        self._running = np.zeros(dim)
        self._last = None

    def update(self, sample) -> np.ndarray:
        """Feed the sample at the next grid point; returns the window value there."""
        sample = np.atleast_1d(np.asarray(sample, dtype=float))
        if self._last is not None:
            self._running = self._running + 0.5 * self.dt * (self._last + sample)
            self._clock.tick()
        self._last = sample
        self._line.push(self._running)
        return (self._running - self._line.read(self._clock)) / self.T

    @property
    def value(self) -> np.ndarray:
        return (self._running - self._line.read(self._clock)) / self.T


class FirstOrderFilter:
    """``gain / (s + gain)``: unit DC gain first-order lag."""

    def __init__(self, gain: float, dim: int = 1, state=None):
        if not gain > 0:
            raise ValueError("filter gain must be positive")
        self.gain = gain
        self.state = np.zeros(dim) if state is None else np.array(state, dtype=float)

    def rhs(self, state, signal):
        return self.gain * (np.asarray(signal) - np.asarray(state))

    def step(self, signal, dt: float) -> np.ndarray:
        """Advance with the input held constant over the step."""
        self.state = rk4_step(lambda _t, s: self.rhs(s, signal), 0.0, self.state, dt, "filter")
        return self.state
