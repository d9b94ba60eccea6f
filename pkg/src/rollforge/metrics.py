"""Drift, consistency and speed measurement for long rollouts.

Quality of a segment of frames is scored as the Fréchet distance
between its empirical Gaussian and the world's stationary law; drift
is the absolute difference of that score between the first and last
segments of a long rollout.  Flicker measures excess one-step
innovation energy beyond the process noise.  Both lean on the world
having a known stationary law, so every number here has an exact
reference instead of a perceptual proxy.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .world import Regime

DEFAULT_SEGMENT = 256
COV_SHRINKAGE = 0.05


def _check_psd(cov: np.ndarray, name: str):
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{name} must be square, got {cov.shape}")
    if np.max(np.abs(cov - cov.T)) > 1e-8:
        raise ValueError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(cov)
    if w.min() < -1e-8:
        raise ValueError(f"{name} has negative eigenvalue {w.min():.3e}")


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_gaussian(mu1, cov1, mu2, cov2) -> float:
    """Squared 2-Wasserstein distance between two Gaussians.

    ||mu1 - mu2||^2 + tr(cov1 + cov2 - 2 (cov1^1/2 cov2 cov1^1/2)^1/2);
    symmetric and zero exactly when the Gaussians coincide.
    """
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    _check_psd(cov1, "cov1")
    _check_psd(cov2, "cov2")
    root1 = _psd_sqrt(np.asarray(cov1, dtype=np.float64))
    cross = _psd_sqrt(root1 @ np.asarray(cov2, dtype=np.float64) @ root1)
    val = float(np.sum((mu1 - mu2) ** 2)
                + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def empirical_gaussian(frames: np.ndarray,
                       shrinkage: float = COV_SHRINKAGE) -> tuple[np.ndarray, np.ndarray]:
    """Mean and shrunk covariance of a segment of frames.

    The covariance is pulled toward its own diagonal by the shrinkage
    weight, which keeps short segments well conditioned.
    """
    frames = np.asarray(frames, dtype=np.float64)
    mean = frames.mean(axis=0)
    centered = frames - mean
    cov = centered.T @ centered / max(len(frames) - 1, 1)
    cov = (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))
    return mean, cov


@dataclass
class DriftReport:
    fd_first: float
    fd_last: float
    delta_drift: float
    flicker: float
    segments: list[tuple[int, int]]

    def __post_init__(self):
        vals = [self.fd_first, self.fd_last, self.delta_drift, self.flicker]
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError(f"drift fields must be finite and non-negative: {vals}")
        if self.delta_drift != abs(self.fd_last - self.fd_first):
            raise ValueError("delta_drift must equal |fd_last - fd_first| exactly")

    def to_dict(self) -> dict:
        return {"fd_first": self.fd_first, "fd_last": self.fd_last,
                "delta_drift": self.delta_drift, "flicker": self.flicker,
                "segments": [list(s) for s in self.segments]}


@dataclass
class PerfReport:
    steady_fps: float
    steady_latency_s: float
    warmup_passes: int

    def __post_init__(self):
        if self.steady_latency_s > 0 and self.steady_fps > 0:
            if abs(self.steady_latency_s * self.steady_fps - 1.0) > 0.05:
                raise ValueError("latency and fps disagree by more than 5%")

    def to_dict(self) -> dict:
        return {"steady_fps": self.steady_fps,
                "steady_latency_s": self.steady_latency_s,
                "warmup_passes": self.warmup_passes}


def flicker_excess(rollout: np.ndarray, regime: Regime) -> float:
    """Mean squared innovation beyond the process noise floor, clipped at 0."""
    rollout = np.asarray(rollout, dtype=np.float64)
    resid = rollout[1:] - rollout[:-1] @ regime.A.T
    excess = float(np.mean(np.sum(resid ** 2, axis=1)) - np.trace(regime.Q))
    return max(excess, 0.0)


def drift_report(rollout: np.ndarray, regime: Regime,
                 seg_len: int = DEFAULT_SEGMENT) -> DriftReport:
    """Score first and last segments against the stationary law."""
    rollout = np.asarray(rollout, dtype=np.float64)
    m = len(rollout)
    if m < 2 * seg_len:
        raise ValueError(f"rollout of {m} frames too short for two segments of {seg_len}")
    ref_mean, ref_cov = regime.stationary_law()
    fd = []
    segments = [(0, seg_len), (m - seg_len, seg_len)]
    for start, length in segments:
        mean, cov = empirical_gaussian(rollout[start:start + length])
        fd.append(frechet_gaussian(mean, cov, ref_mean, ref_cov))
    return DriftReport(fd_first=fd[0], fd_last=fd[1],
                       delta_drift=abs(fd[1] - fd[0]),
                       flicker=flicker_excess(rollout, regime),
                       segments=segments)


def fit_dynamics(frames: np.ndarray) -> np.ndarray:
    """Least-squares one-step transition matrix of a frame sequence."""
    frames = np.asarray(frames, dtype=np.float64)
    x, y = frames[:-1], frames[1:]
    sol, _, _, _ = np.linalg.lstsq(x, y, rcond=None)
    return sol.T


def latency_bench(stream, warm_frames: int, measure_frames: int,
                  pace_s: float = 0.0) -> PerfReport:
    """Median per-frame latency after the stream reaches steady speed.

    pace_s > 0 sleeps that long before every timed pass, reproducing a
    live session's duty cycle; a woken-up pass costs measurably more
    than one in a hot loop, so paced telemetry should be compared
    against a bench run at the same cadence.
    """
    if measure_frames < 64:
        raise ValueError(f"measure_frames must be >= 64, got {measure_frames}")
    for _ in range(warm_frames):
        stream.next_frame()
    times = np.empty(measure_frames)
    for k in range(measure_frames):
        if pace_s > 0.0:
            time.sleep(pace_s)
        t0 = time.perf_counter()
        stream.next_frame()
        times[k] = time.perf_counter() - t0
    median = float(np.median(times))
    return PerfReport(steady_fps=1.0 / median, steady_latency_s=median,
                      warmup_passes=int(getattr(stream, "warmup_passes", 0)))


class DriftTracker:
    """Incremental drift estimate for a live stream.

    Keeps the first seg_len frames and a ring of the most recent ones;
    the report compares segments of min(seg_len, count // 2) frames so
    something is available soon after start.  Flicker accumulates over
    all consecutive pairs seen.
    """

    def __init__(self, regime: Regime, seg_len: int = DEFAULT_SEGMENT):
        self.regime = regime
        self.seg_len = seg_len
        self.first: list[np.ndarray] = []
        self.last: deque[np.ndarray] = deque(maxlen=seg_len)
        self.count = 0
        self._prev: np.ndarray | None = None
        self._resid_sum = 0.0

    def add(self, frame: np.ndarray):
        frame = np.asarray(frame, dtype=np.float64)
        if len(self.first) < self.seg_len:
            self.first.append(frame)
        self.last.append(frame)
        if self._prev is not None:
            r = frame - self.regime.A @ self._prev
            self._resid_sum += float(np.sum(r ** 2))
        self._prev = frame
        self.count += 1

    def report(self) -> DriftReport | None:
        length = min(self.seg_len, self.count // 2)
        if length < 2:
            return None
        ref_mean, ref_cov = self.regime.stationary_law()
        first = np.stack(self.first[:length])
        last = np.stack(list(self.last)[-length:])
        mean_f, cov_f = empirical_gaussian(first)
        mean_l, cov_l = empirical_gaussian(last)
        fd_first = frechet_gaussian(mean_f, cov_f, ref_mean, ref_cov)
        fd_last = frechet_gaussian(mean_l, cov_l, ref_mean, ref_cov)
        flicker = max(self._resid_sum / max(self.count - 1, 1)
                      - float(np.trace(self.regime.Q)), 0.0)
        return DriftReport(fd_first=fd_first, fd_last=fd_last,
                           delta_drift=abs(fd_last - fd_first), flicker=flicker,
                           segments=[(0, length), (self.count - length, length)])
