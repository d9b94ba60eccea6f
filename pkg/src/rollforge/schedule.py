"""Noise level arithmetic for the few-step velocity sampler.

Levels live on [0, 1000]: 0 is clean data, 1000 is pure noise.  The raw
level t is warped by a shift with strength k before it is turned into a
mixing weight,

    shift(t, k) = (k * t/1000) / (1 + (k - 1) * t/1000) * 1000
    sigma(t)    = shift(t, k) / 1000

and a noisy sample mixes data and noise linearly,

    x_t = (1 - sigma(t)) * x + sigma(t) * eps.

The network predicts velocity v = eps - x, so the clean estimate is
recovered as x_hat = x_t - sigma(t) * v.  Given a clean estimate the
Gaussian posterior score of the corrupted sample is

    score(z) = -(z - (1 - sigma(t)) * x_hat) / sigma(t)**2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_LEVEL = 1000.0


def _check_level(t) -> None:
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > MAX_LEVEL):
        raise ValueError(f"noise level out of range [0, {MAX_LEVEL}]: {t}")


def shift_timestep(t, shift_k: float = 5.0):
    """Warp a level in [0, 1000] toward the noisy end with strength shift_k.

    Accepts a python float or a numpy array; returns the same kind.
    The endpoints map exactly: shift(0) = 0 and shift(1000) = 1000.
    """
    if shift_k <= 0.0:
        raise ValueError(f"shift_k must be positive, got {shift_k}")
    _check_level(t)
    u = np.asarray(t, dtype=np.float64) / MAX_LEVEL
    out = shift_k * u / (1.0 + (shift_k - 1.0) * u) * MAX_LEVEL
    out = np.where(u == 1.0, MAX_LEVEL, out)
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out)
    return out


def sigma(t, shift_k: float = 5.0):
    """Noise mixing weight in [0, 1] for level t after the shift warp."""
    s = shift_timestep(t, shift_k)
    return s / MAX_LEVEL


def uniform_schedule(num_steps: int) -> list[float]:
    """Evenly spaced raw levels (1000 * i / T for i = 1..T), ascending.

    The last level is exactly 1000.
    """
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    return [MAX_LEVEL * i / num_steps for i in range(1, num_steps + 1)]


def forward_diffuse(x, t, noise, shift_k: float = 5.0):
    """Corrupt clean data to level t: (1 - sigma) * x + sigma * noise.

    x and noise must have the same shape.  t may be a scalar or an array
    broadcastable against x.
    """
    x = np.asarray(x, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x.shape != noise.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs noise {noise.shape}")
    s = sigma(t, shift_k)
    return (1.0 - s) * x + s * noise


def data_prediction(x_t, v, t, shift_k: float = 5.0):
    """Invert a velocity prediction to a clean estimate: x_t - sigma(t) * v.

    Works on numpy arrays and on torch tensors (t scalar) since only
    elementwise arithmetic is involved.  At t = 0 this is the identity.
    """
    s = sigma(t, shift_k)
    return x_t - s * v


def posterior_score(z, x_hat, t, shift_k: float = 5.0):
    """Score of N((1 - sigma) * x_hat, sigma**2 I) at z.

    Requires t > 0; at t = 0 the corrupted law is degenerate and the
    score is undefined.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= 0.0):
        raise ValueError(f"posterior_score requires t > 0, got {t}")
    s = sigma(t, shift_k)
    z = np.asarray(z, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    return -(z - (1.0 - s) * x_hat) / (s * s)


@dataclass(frozen=True)
class NoiseSchedule:
    """Bundle of shift strength and the uniform T-step level ladder."""

    shift_k: float = 5.0
    num_steps: int = 5

    def __post_init__(self):
        if self.shift_k <= 0.0:
            raise ValueError(f"shift_k must be positive, got {self.shift_k}")
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")

    @property
    def levels(self) -> tuple[float, ...]:
        """Raw levels t_1 < ... < t_T, with t_T = 1000 exactly."""
        return tuple(uniform_schedule(self.num_steps))

    def level(self, index: int) -> float:
        """Raw level t_index for index in 0..T (t_0 = 0 is clean)."""
        if index < 0 or index > self.num_steps:
            raise ValueError(f"level index out of range 0..{self.num_steps}: {index}")
        if index == 0:
            return 0.0
        return self.levels[index - 1]

    def sigma(self, t):
        return sigma(t, self.shift_k)

    def forward_diffuse(self, x, t, noise):
        return forward_diffuse(x, t, noise, self.shift_k)

    def data_prediction(self, x_t, v, t):
        return data_prediction(x_t, v, t, self.shift_k)

    def posterior_score(self, z, x_hat, t):
        return posterior_score(z, x_hat, t, self.shift_k)
