import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

import tensor_core as tc
from errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

TIME_AXIS = -2  # latents are [..., C, L, V]; L sits second from the end


@dataclass(frozen=True)
class GainFilter:
    length: int
    cutoff: int
    gain_values: np.ndarray
    alpha: float = 1.0

    def multipliers(self):
        return 1.0 + self.alpha * self.gain_values


@dataclass
class BandEnergyReport:
    cutoff: int
    low: list
    high: list
    per_k: list
    freq_axis: list = field(default_factory=list)

    @property
    def total(self):
        return [lo + hi for lo, hi in zip(self.low, self.high)]

    def to_dict(self):
        return {
            "cutoff": self.cutoff,
            "low": list(self.low),
            "high": list(self.high),
            "per_k": list(self.per_k),
            "freq_axis": list(self.freq_axis),
        }


@lru_cache(maxsize=64)
def dct_matrix(length):
    """Orthonormal DCT-II matrix D with D[k, l] = beta_k cos(pi (2l+1) k / 2L)."""
    if length < 1:
        raise ConfigurationError(f"sequence length must be >= 1, got {length}")
    k = np.arange(length)[:, None]
    l = np.arange(length)[None, :]
    d = np.cos(math.pi * (2 * l + 1) * k / (2 * length))
    d[0, :] *= math.sqrt(1.0 / length)
    d[1:, :] *= math.sqrt(2.0 / length)
    d.setflags(write=False)
    return d


def resolve_cutoff(length, cutoff_div):
    """Frequency split index M = L / cutoff_div, at least 1."""
    if cutoff_div < 1:
        raise ConfigurationError(f"cutoff divisor must be >= 1, got {cutoff_div}")
    return max(1, length // cutoff_div)


def _check_cutoff(length, cutoff):
    if not 0 < cutoff <= length:
        raise ConfigurationError(f"cutoff M={cutoff} must satisfy 0 < M <= L={length}")


def dct_temporal(z, axis=TIME_AXIS):
    length = tc.value_of(z).shape[axis]
    return tc.transform(z, dct_matrix(length), axis)


def idct_temporal(spectrum, axis=TIME_AXIS):
    length = tc.value_of(spectrum).shape[axis]
    return tc.transform(spectrum, dct_matrix(length).T, axis)


def build_gain(length, cutoff, s_hat, alpha=1.0):
    _check_cutoff(length, cutoff)
    if not 0.0 <= s_hat <= 1.0:
        raise ConfigurationError(f"intensity score must lie in [0, 1], got {s_hat}")
    values = np.zeros(length)
    values[cutoff:] = s_hat
    values.setflags(write=False)
    return GainFilter(length=length, cutoff=cutoff, gain_values=values, alpha=alpha)


def spectral_multipliers(length, cutoff, s_hat, alpha=1.0):
    """(1 + alpha G_k) per sample: returns [N, L] for a vector of N intensity scores."""
    _check_cutoff(length, cutoff)
    s = np.atleast_1d(np.asarray(s_hat, dtype=np.float64))
    mask = (np.arange(length) >= cutoff).astype(np.float64)
    return 1.0 + alpha * s[:, None] * mask[None, :]


def apply_spectral_residual(z, gain, axis=TIME_AXIS):
    """SG-SRM: IDCT(DCT(z) * (1 + alpha G)) along the time axis."""
    length = tc.value_of(z).shape[axis]
    if gain.length != length:
        raise ShapeError(f"gain filter length {gain.length} does not match sequence length {length}")
    multipliers = gain.multipliers()
    if np.all(multipliers == 1.0):
        return z
    shape = [1] * tc.value_of(z).ndim
    shape[axis] = length
    return modulate_spectrum(z, multipliers.reshape(shape), axis)


def modulate_spectrum(z, multipliers, axis=TIME_AXIS):
    """Spectral re-weighting with an arbitrary broadcastable multiplier array."""
    if np.all(multipliers == 1.0):
        return z
    return idct_temporal(dct_temporal(z, axis) * multipliers, axis)


def band_energy(z, cutoff, axis=TIME_AXIS):
    """Low/high DCT band energies per sample; ``z`` is [C, L, V] or a batch [N, C, L, V]."""
    z = np.asarray(tc.value_of(z))
    length = z.shape[axis]
    _check_cutoff(length, cutoff)
    batch = z[None] if z.ndim == 3 else z
    spectrum = dct_temporal(batch, axis)
    energy = np.moveaxis(spectrum ** 2, axis, -1).reshape(batch.shape[0], -1, length).sum(axis=1)
    low = energy[:, :cutoff].sum(axis=1)
    high = energy[:, cutoff:].sum(axis=1)
    return BandEnergyReport(
        cutoff=cutoff,
        low=low.tolist(),
        high=high.tolist(),
        per_k=energy.mean(axis=0).tolist(),
        freq_axis=(np.arange(length) / length).tolist(),
    )
