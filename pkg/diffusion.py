import logging
import math
from dataclasses import dataclass

import numpy as np

import tensor_core as tc
from errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

BETA_START = 1e-4
BETA_END = 0.02
SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    kind: str = "linear"

    def abar(self, t):
        """alpha_bar at 1-indexed timestep(s) t."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ConfigurationError(f"timestep out of range 1..{self.T}: {t.tolist()}")
        return self.alpha_bar[t - 1]

    def arrays(self):
        return {"schedule.beta": self.beta, "schedule.alpha_bar": self.alpha_bar}


def make_schedule(T, kind="linear"):
    if T < 1:
        raise ConfigurationError(f"number of diffusion steps must be >= 1, got {T}")
    if kind == "linear":
        beta = np.linspace(BETA_START, BETA_END, T)
    elif kind == "cosine":
        steps = np.arange(T + 1) / T
        f = np.cos((steps + 0.008) / 1.008 * math.pi / 2) ** 2
        beta = np.clip(1.0 - f[1:] / f[:-1], 1e-8, 0.999)
    else:
        raise ConfigurationError(f"unknown schedule kind '{kind}', expected one of {SCHEDULE_KINDS}")
    alpha_bar = np.cumprod(1.0 - beta)
    beta.setflags(write=False)
    alpha_bar.setflags(write=False)
    logger.debug(f"{kind} schedule T={T}: alpha_bar[T]={alpha_bar[-1]:.6f}")
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar, kind=kind)


def schedule_from_arrays(beta, alpha_bar, kind="linear"):
    beta = np.array(beta, dtype=np.float64)
    alpha_bar = np.array(alpha_bar, dtype=np.float64)
    if beta.shape != alpha_bar.shape or beta.ndim != 1:
        raise ShapeError("schedule arrays must be 1-D and of equal length")
    beta.setflags(write=False)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(T=beta.size, beta=beta, alpha_bar=alpha_bar, kind=kind)


def _per_sample(values, ndim):
    # scalar stays scalar; a [B] vector broadcasts over the trailing latent axes
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return float(values)
    return values.reshape(values.shape + (1,) * (ndim - values.ndim))


def forward_diffuse(z0, t, eps, schedule):
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps; ``t`` may be a per-sample vector."""
    if tc.value_of(eps).shape != tc.value_of(z0).shape:
        raise ShapeError(f"noise shape {tc.value_of(eps).shape} != latent shape {tc.value_of(z0).shape}")
    abar = _per_sample(schedule.abar(t), tc.value_of(z0).ndim)
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def estimate_z0(z_t, eps_hat, t, schedule):
    """Clean-latent recovery: (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)."""
    abar = schedule.abar(t)
    if np.any(abar <= 0):
        raise FloatingPointError(f"alpha_bar must be positive to recover z0, got {abar}")
    abar = _per_sample(abar, tc.value_of(z_t).ndim)
    return (z_t - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)
