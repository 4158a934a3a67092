"""Variance-preserving discrete forward process.

A schedule is a pair of lookup tables alpha/sigma indexed by integer
level 0..T with alpha[t]^2 + sigma[t]^2 = 1.  A frame at level t is

    z_t = alpha[t] * z_0 + sigma[t] * eps,       eps ~ N(0, I)

so level 0 is the clean frame and level T is (nearly) pure noise.  The
tables are the single source of truth for every other module: training,
sampling, and layout composition all pass the same `NoiseSchedule`
around rather than recomputing coefficients.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .rng import Rng

__all__ = ["NoiseSchedule", "build_schedule", "sample_gaussian", "forward_diffuse"]

SCHEDULE_KINDS = ("linear-beta", "cosine")

# Reference beta ramp, defined at 1000 steps and rescaled for other T so
# that the terminal signal fraction stays small for any horizon.
_BETA_LO = 1e-4
_BETA_HI = 2e-2
_BETA_REF_STEPS = 1000
_BETA_CAP = 0.999
_COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete noise schedule over levels 0..T inclusive.

    Attributes:
        T: number of diffusion steps; tables have length T + 1.
        alpha: signal coefficients, alpha[0] == 1, strictly decreasing.
        sigma: noise coefficients, sigma[0] == 0, strictly increasing.
        kind: which construction produced the tables.
    """

    T: int
    alpha: np.ndarray
    sigma: np.ndarray
    kind: str

    def __post_init__(self):
        if self.alpha.shape != (self.T + 1,) or self.sigma.shape != (self.T + 1,):
            raise ShapeError("schedule tables must have length T + 1")


def _betas(T: int, kind: str) -> np.ndarray:
    if kind == "linear-beta":
        scale = _BETA_REF_STEPS / T
        ramp = np.linspace(scale * _BETA_LO, scale * _BETA_HI, T)
        return np.minimum(ramp, _BETA_CAP)
    if kind == "cosine":
        s = _COSINE_OFFSET
        grid = np.arange(T + 1, dtype=np.float64) / T
        abar = np.cos((grid + s) / (1.0 + s) * np.pi / 2.0) ** 2
        abar /= abar[0]
        betas = 1.0 - abar[1:] / abar[:-1]
        return np.clip(betas, 1e-8, _BETA_CAP)
    raise InvalidArgumentError(f"unknown schedule kind {kind!r}")


def build_schedule(T: int, kind: str = "linear-beta") -> NoiseSchedule:
    """Construct alpha/sigma tables for a T-step schedule.

    Args:
        T: horizon, at least 2.
        kind: "linear-beta" (beta ramp 1e-4..2e-2, rescaled by 1000/T and
            capped below 1) or "cosine" (squared-cosine signal fraction).

    The returned tables satisfy alpha[0] == 1, sigma[0] == 0,
    alpha[t]^2 + sigma[t]^2 == 1, alpha strictly decreasing, sigma
    strictly increasing, and alpha[T] <= 0.05.
    """
    if T < 2:
        raise InvalidArgumentError(f"schedule needs T >= 2, got {T}")
    betas = _betas(T, kind)
    abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    alpha = np.sqrt(abar)
    sigma = np.sqrt(1.0 - abar)
    return NoiseSchedule(T=T, alpha=alpha, sigma=sigma, kind=kind)


def sample_gaussian(rng: Rng, d: int) -> np.ndarray:
    """Draw one flat frame of d i.i.d. standard normal entries."""
    if d < 1:
        raise InvalidArgumentError(f"frame width must be >= 1, got {d}")
    return rng.normal((d,))


def forward_diffuse(z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Push clean content z0 to level t with the given noise draw.

    Works frame-wise: z0 and eps may be a single frame (d,) or a stack
    of frames (n, d), as long as the two shapes agree.
    """
    t = int(t)
    if not 0 <= t <= sched.T:
        raise InvalidArgumentError(f"level {t} outside 0..{sched.T}")
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ShapeError(f"content shape {z0.shape} != noise shape {eps.shape}")
    return sched.alpha[t] * z0 + sched.sigma[t] * eps
