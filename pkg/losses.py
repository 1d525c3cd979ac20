import logging
from dataclasses import dataclass

import numpy as np

import tensor_core as tc
from errors import ConfigurationError, ShapeError
from spectral import TIME_AXIS, dct_temporal

logger = logging.getLogger(__name__)

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class SpectralWeightConfig:
    M: int
    gamma: float = 1.0
    T: int = 50

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigurationError(f"detail weight gamma must be >= 0, got {self.gamma}")
        if self.M < 1 or self.T < 1:
            raise ConfigurationError(f"invalid spectral weight config M={self.M} T={self.T}")


def _same_shape(a, b):
    if tc.value_of(a).shape != tc.value_of(b).shape:
        raise ShapeError(f"shape mismatch: {tc.value_of(a).shape} vs {tc.value_of(b).shape}")


def diffusion_loss(eps_hat, eps):
    _same_shape(eps_hat, eps)
    return tc.mean(tc.square(eps_hat - eps))


def spectral_weight(k, t, cfg):
    if k < cfg.M:
        return 1.0
    return cfg.gamma * (1.0 - t / cfg.T)


def spectral_weights(length, t, cfg):
    """W(k, t) for every k; a vector of timesteps gives one row per sample, [B, L]."""
    if cfg.M > length:
        raise ConfigurationError(f"cutoff M={cfg.M} exceeds sequence length {length}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    high = cfg.gamma * (1.0 - t[:, None] / cfg.T)
    k = np.arange(length)[None, :]
    return np.where(k < cfg.M, 1.0, high)


def spectral_loss(z0, z0_hat, t, cfg, weights=None, axis=TIME_AXIS):
    """Weighted squared spectral error, divided by the element count.

    ``weights`` overrides W(k, t) with any array broadcastable to a [.., L] row.
    """
    _same_shape(z0, z0_hat)
    shape = tc.value_of(z0).shape
    length = shape[axis]
    if weights is None:
        weights = spectral_weights(length, t, cfg)
        if np.ndim(t) == 0:
            weights = weights[0]
    weights = np.asarray(weights, dtype=np.float64)
    # place the frequency axis of W where L sits in the latent
    trailing = -axis - 1
    if weights.ndim == 2:
        weights = weights.reshape(weights.shape[:1] + (1,) * (len(shape) - 1 - 1 - trailing)
                                  + weights.shape[1:] + (1,) * trailing)
    else:
        weights = weights.reshape(weights.shape + (1,) * trailing)
    diff = dct_temporal(z0 - z0_hat, axis)
    return tc.sum(tc.square(diff) * weights) / float(np.prod(shape))


def total_loss(l_diff, l_freq, lambda_freq):
    return l_diff + lambda_freq * l_freq


def bce_distill_loss(s_hat, s_gt):
    """Binary cross-entropy, mean over entries; s_hat clamped away from {0, 1}."""
    s_gt = np.asarray(s_gt, dtype=np.float64)
    s = tc.clip(s_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return tc.mean(-(s_gt * tc.log(s) + (1.0 - s_gt) * tc.log(1.0 - s)))
