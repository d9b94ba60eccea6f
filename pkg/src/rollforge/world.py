"""Synthetic linear-Gaussian world with closed-form joint distributions.

A regime is the stable linear stochastic recursion

    x_1 ~ N(0, Sigma0),    x_{i+1} = A x_i + w_i,  w_i ~ N(0, Q)

with A a contraction times a block-diagonal stack of 2-D rotations.  A
is stable, so the chain has a stationary covariance SigmaInf solving
the fixed point SigmaInf = A SigmaInf A^T + Q, and any finite block of
frames is jointly Gaussian with covariance blocks

    Cov(x_i, x_j) = A^(i-j) Sigma_j   for i >= j,

where Sigma_j is the marginal covariance of frame j.  Everything the
trainer needs (sequence samples, joint covariances, scores of noised
marginals) is exact here; no learned component is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
import scipy.linalg

from . import schedule

# step tolerance well under the 1e-10 target so the remaining geometric
# tail keeps the solution itself within that distance
LYAPUNOV_TOL = 1e-13
LYAPUNOV_RESIDUAL_TOL = 1e-8
MAX_JOINT_DIM = 512


def rotation_block(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def solve_stationary_cov(A: np.ndarray, Q: np.ndarray, tol: float = LYAPUNOV_TOL) -> np.ndarray:
    """Fixed-point iteration for SigmaInf = A SigmaInf A^T + Q."""
    sigma = Q.copy()
    for _ in range(100000):
        nxt = A @ sigma @ A.T + Q
        if np.max(np.abs(nxt - sigma)) < tol:
            sigma = nxt
            break
        sigma = nxt
    else:
        raise RuntimeError("stationary covariance iteration did not converge")
    return 0.5 * (sigma + sigma.T)


@dataclass(frozen=True)
class Regime:
    """One linear-Gaussian dynamics regime, with its derived covariances.

    The label doubles as the conditioning signal fed to the generator,
    so it is a small non-negative integer rather than a name.
    """

    label: int
    A: np.ndarray
    Q: np.ndarray
    Sigma0: np.ndarray
    SigmaInf: np.ndarray
    rotation_angle: float
    contraction: float
    process_noise: float

    def __post_init__(self):
        if self.label < 0:
            raise ValueError(f"regime label must be non-negative, got {self.label}")
        radius = float(np.max(np.abs(np.linalg.eigvals(self.A))))
        if radius >= 1.0:
            raise ValueError(f"regime {self.label!r}: spectral radius {radius:.4f} >= 1")
        residual = np.max(np.abs(self.A @ self.SigmaInf @ self.A.T + self.Q - self.SigmaInf))
        if residual > LYAPUNOV_RESIDUAL_TOL:
            raise ValueError(f"regime {self.label!r}: stationary residual {residual:.2e}")
        for name in ("Q", "Sigma0", "SigmaInf"):
            m = getattr(self, name)
            if np.max(np.abs(m - m.T)) > 1e-10:
                raise ValueError(f"regime {self.label!r}: {name} not symmetric")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @cached_property
    def chol_sigma0(self) -> np.ndarray:
        return np.linalg.cholesky(self.Sigma0)

    @cached_property
    def chol_q(self) -> np.ndarray:
        return np.linalg.cholesky(self.Q)

    def stationary_law(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the stationary single-frame law."""
        return np.zeros(self.dim), self.SigmaInf.copy()

    def to_config(self) -> dict:
        return {
            "label": self.label,
            "dim": self.dim,
            "rotation_angle": self.rotation_angle,
            "contraction": self.contraction,
            "process_noise": self.process_noise,
        }

    @staticmethod
    def from_config(config: dict) -> "Regime":
        return make_regime(
            config["label"],
            dim=config["dim"],
            rotation_angle=config["rotation_angle"],
            contraction=config["contraction"],
            process_noise=config["process_noise"],
        )


def make_regime(label: int, dim: int = 8, rotation_angle: float = 0.0,
                contraction: float = 0.95, process_noise: float = 0.05,
                initial_cov: np.ndarray | None = None) -> Regime:
    """Build a regime whose A rotates each coordinate pair by rotation_angle.

    dim must be even.  contraction = 0 gives the memoryless world A = 0.
    Sigma0 defaults to the stationary covariance, so sequences start in
    steady state.
    """
    if dim % 2 != 0 or dim < 2:
        raise ValueError(f"dim must be even and >= 2, got {dim}")
    if contraction >= 1.0 or contraction < 0.0:
        raise ValueError(f"contraction must lie in [0, 1) for stability, got {contraction}")
    if process_noise <= 0.0:
        raise ValueError(f"process_noise must be positive, got {process_noise}")
    block = contraction * rotation_block(rotation_angle)
    A = scipy.linalg.block_diag(*[block] * (dim // 2))
    Q = process_noise * np.eye(dim)
    sigma_inf = solve_stationary_cov(A, Q)
    sigma0 = sigma_inf.copy() if initial_cov is None else np.asarray(initial_cov, dtype=np.float64)
    return Regime(label=label, A=A, Q=Q, Sigma0=sigma0, SigmaInf=sigma_inf,
                  rotation_angle=rotation_angle, contraction=contraction,
                  process_noise=process_noise)


def default_regimes(dim: int = 8) -> list[Regime]:
    """The four stock regimes, distinguished only by rotation speed."""
    angles = [0.0, math.pi / 12, math.pi / 8, math.pi / 6]
    return [make_regime(label, dim=dim, rotation_angle=angle)
            for label, angle in enumerate(angles)]


def sample_sequence(regime: Regime, n_frames: int, seed: int,
                    initial: np.ndarray | None = None) -> np.ndarray:
    """Draw one trajectory of shape (n_frames, dim) with a seeded generator."""
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    rng = np.random.default_rng(seed)
    d = regime.dim
    out = np.empty((n_frames, d), dtype=np.float64)
    if initial is None:
        out[0] = regime.chol_sigma0 @ rng.standard_normal(d)
    else:
        out[0] = np.asarray(initial, dtype=np.float64)
    for i in range(1, n_frames):
        out[i] = regime.A @ out[i - 1] + regime.chol_q @ rng.standard_normal(d)
    return out


@dataclass
class JointGaussian:
    """Flattened joint law of n_frames consecutive frames."""

    mean: np.ndarray
    cov: np.ndarray
    n_frames: int
    dim: int
    _score_factors: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        asym = np.max(np.abs(self.cov - self.cov.T))
        if asym > 1e-10:
            raise ValueError(f"joint covariance asymmetry {asym:.2e}")
        # fails loudly if the assembled covariance is not positive definite
        self.chol = np.linalg.cholesky(self.cov)

    def noised_factor(self, t: float, shift_k: float = 5.0):
        """Cholesky factor of (1-s)^2 cov + s^2 I at level t, cached."""
        if t <= 0.0:
            raise ValueError(f"diffused score needs a positive level, got {t}")
        key = (round(float(t), 9), shift_k)
        if key not in self._score_factors:
            s = schedule.sigma(t, shift_k)
            a = 1.0 - s
            m = a * a * self.cov + s * s * np.eye(self.cov.shape[0])
            # levels drawn from a continuous range rarely repeat, so bound
            # the cache instead of letting factors pile up over a long run
            while len(self._score_factors) >= 64:
                self._score_factors.pop(next(iter(self._score_factors)))
            self._score_factors[key] = (scipy.linalg.cho_factor(m, lower=True), a)
        return self._score_factors[key]


def joint_gaussian(regime: Regime, n_frames: int, stationary_start: bool = False) -> JointGaussian:
    """Exact joint Gaussian over n_frames frames, flattened frame-major.

    Block (i, j) of the covariance is A^(i-j) Sigma_j for i >= j.  The
    start covariance is Sigma0 unless stationary_start, in which case
    every marginal is SigmaInf.  Joint dimension is capped at 512.
    """
    d = regime.dim
    nd = n_frames * d
    if nd > MAX_JOINT_DIM:
        raise ValueError(f"joint dimension {nd} exceeds cap {MAX_JOINT_DIM}")
    start = regime.SigmaInf if stationary_start else regime.Sigma0
    marginals = [start]
    for _ in range(1, n_frames):
        marginals.append(regime.A @ marginals[-1] @ regime.A.T + regime.Q)
    cov = np.zeros((nd, nd), dtype=np.float64)
    powers = [np.eye(d)]
    for _ in range(1, n_frames):
        powers.append(regime.A @ powers[-1])
    for j in range(n_frames):
        for i in range(j, n_frames):
            block = powers[i - j] @ marginals[j]
            cov[i * d:(i + 1) * d, j * d:(j + 1) * d] = block
            cov[j * d:(j + 1) * d, i * d:(i + 1) * d] = block.T
    cov = 0.5 * (cov + cov.T)
    return JointGaussian(mean=np.zeros(nd), cov=cov, n_frames=n_frames, dim=d)


def analytic_data_score(z: np.ndarray, t, jg: JointGaussian, shift_k: float = 5.0) -> np.ndarray:
    """Score of the level-t noised joint law at z.

    The noised law is N(a * mean, a^2 cov + b^2 I) with a = 1 - sigma(t)
    and b = sigma(t); the score is -(a^2 cov + b^2 I)^{-1} (z - a mean),
    solved through a cached Cholesky factor.  z may be (nd,) or
    (batch, nd); t may be a scalar or one level per batch element.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    if zb.shape[1] != jg.mean.shape[0]:
        raise ValueError(f"z has dim {zb.shape[1]}, joint law has dim {jg.mean.shape[0]}")
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (zb.shape[0],))
    out = np.empty_like(zb)
    for tv in np.unique(t_arr):
        idx = np.nonzero(t_arr == tv)[0]
        factor, a = jg.noised_factor(float(tv), shift_k)
        resid = zb[idx] - a * jg.mean
        out[idx] = -scipy.linalg.cho_solve(factor, resid.T).T
    return out[0] if single else out
