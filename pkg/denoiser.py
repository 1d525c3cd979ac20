"""Conditional noise predictor eps_theta(z_t, t; d, s) built from tensor_core primitives.

Tokens run along the temporal axis only: each of the L frames becomes one token whose
features are the C*V channel/joint values. Every block is

    modulate -> self-attention -> SG-SRM -> residual
    modulate -> feature MLP -> residual

with scale/shift modulation driven by the condition vector built from the timestep and
the text embedding.
"""
import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

import tensor_core as tc
from diffusion import make_schedule
from errors import ConfigurationError, ShapeError
from spectral import modulate_spectrum, resolve_cutoff, spectral_multipliers

logger = logging.getLogger(__name__)

GATING_MODES = ("predicted", "none", "uniform", "random")
INIT_STD = 0.02
MODULATIONS = ("attn_scale", "attn_shift", "mlp_scale", "mlp_shift")


@dataclass(frozen=True)
class DenoiserConfig:
    depth: int = 2
    model_dim: int = 32
    heads: int = 1
    channels: int = 8
    length: int = 16
    joints: int = 5
    cutoff_div: int = 4
    alpha: float = 1.0
    gating: str = "predicted"
    text_dim: int = 64
    mlp_ratio: int = 4
    timesteps: int = 50
    schedule: str = "linear"

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigurationError(f"depth must be >= 1, got {self.depth}")
        if self.heads < 1 or self.model_dim % self.heads:
            raise ConfigurationError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.model_dim % 2:
            raise ConfigurationError(f"model_dim must be even for sinusoidal encodings, got {self.model_dim}")
        if min(self.channels, self.length, self.joints, self.text_dim, self.mlp_ratio, self.timesteps) < 1:
            raise ConfigurationError(f"all dimensions must be positive: {self}")
        if self.gating not in GATING_MODES:
            raise ConfigurationError(f"unknown gating mode '{self.gating}', expected one of {GATING_MODES}")
        resolve_cutoff(self.length, self.cutoff_div)

    @property
    def token_dim(self):
        return self.channels * self.joints

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def tiny_config(**overrides):
    """Smallest configuration that still has two SG-SRM blocks; used for gradient checks."""
    base = DenoiserConfig(depth=2, model_dim=8, heads=2, channels=2, length=8, joints=2,
                          text_dim=8, mlp_ratio=2, timesteps=50)
    return replace(base, **overrides)


@dataclass
class DiffusionModel:
    params: tc.ParameterSet
    config: DenoiserConfig
    schedule: object
    embed_seed: int = 0


def parameter_shapes(config):
    d, hidden = config.model_dim, config.model_dim * config.mlp_ratio
    shapes = [
        ("in.w", (config.token_dim, d)), ("in.b", (d,)),
        ("cond.text.w", (config.text_dim, d)), ("cond.text.b", (d,)),
        ("cond.w1", (d, d)), ("cond.b1", (d,)),
        ("cond.w2", (d, d)), ("cond.b2", (d,)),
    ]
    for j in range(config.depth):
        p = f"block{j}."
        for name in MODULATIONS:
            shapes += [(p + name + ".w", (d, d)), (p + name + ".b", (d,))]
        shapes += [(p + "attn.q", (d, d)), (p + "attn.k", (d, d)), (p + "attn.v", (d, d)),
                   (p + "attn.o.w", (d, d)), (p + "attn.o.b", (d,))]
        shapes += [(p + "mlp.w1", (d, hidden)), (p + "mlp.b1", (hidden,)),
                   (p + "mlp.w2", (hidden, d)), (p + "mlp.b2", (d,))]
    shapes += [("out.w", (d, config.token_dim)), ("out.b", (config.token_dim,))]
    return shapes


def init_denoiser(config, seed):
    rng = np.random.default_rng(seed)
    params = []
    for name, shape in parameter_shapes(config):
        if name.startswith("out.") or len(shape) == 1:
            value = np.zeros(shape)
        else:
            value = rng.normal(0.0, INIT_STD, size=shape)
        params.append((name, value))
    params = tc.ParameterSet(params)
    logger.debug(f"initialized denoiser with {params.count()} parameters (seed={seed})")
    return params


def build_model(config, seed, embed_seed=0):
    schedule = make_schedule(config.timesteps, config.schedule)
    return DiffusionModel(params=init_denoiser(config, seed), config=config, schedule=schedule,
                          embed_seed=embed_seed)


def timestep_embedding(t, dim):
    """Interleaved sin/cos of t at frequencies 10000^(-2i/dim)."""
    if dim % 2:
        raise ConfigurationError(f"timestep embedding dimension must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    args = t[..., None] * freqs
    emb = np.empty(t.shape + (dim,))
    emb[..., 0::2] = np.sin(args)
    emb[..., 1::2] = np.cos(args)
    return emb


def effective_intensity(config, s_hat, batch, rng=None):
    """Gain score actually fed to SG-SRM under the configured gating mode, one per sample."""
    if config.gating == "none":
        return np.zeros(batch)
    if config.gating == "uniform":
        return np.ones(batch)
    if config.gating == "random":
        if rng is None:
            raise ConfigurationError("random gating needs a random generator")
        return rng.random(batch)
    s = np.broadcast_to(np.asarray(s_hat, dtype=np.float64), (batch,)).copy()
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise ConfigurationError(f"intensity score outside [0, 1]: {s.tolist()}")
    return s


def _linear(params, name, x):
    return x @ params[name + ".w"] + params[name + ".b"]


def _attention(params, prefix, h, heads):
    batch, length, dim = tc.value_of(h).shape
    head_dim = dim // heads

    def split(x):
        return tc.transpose(tc.reshape(x, (batch, length, heads, head_dim)), (0, 2, 1, 3))

    q = split(h @ params[prefix + "attn.q"])
    k = split(h @ params[prefix + "attn.k"])
    v = split(h @ params[prefix + "attn.v"])
    scores = (q @ tc.transpose(k, (0, 1, 3, 2))) / math.sqrt(head_dim)
    mixed = tc.softmax(scores, axis=-1) @ v
    merged = tc.reshape(tc.transpose(mixed, (0, 2, 1, 3)), (batch, length, dim))
    return _linear(params, prefix + "attn.o", merged)


def denoise(params, config, z_t, t, d, s_hat, rng=None):
    """Predict the noise in ``z_t`` ([C, L, V] or a batch [B, C, L, V])."""
    z_t = np.asarray(z_t, dtype=np.float64)
    single = z_t.ndim == 3
    z = z_t[None] if single else z_t
    if z.ndim != 4:
        raise ShapeError(f"latent must be [C, L, V] or [B, C, L, V], got {z_t.shape}")
    batch, channels, length, joints = z.shape
    if (channels, joints) != (config.channels, config.joints):
        raise ShapeError(f"latent channels/joints {(channels, joints)} do not match model "
                         f"{(config.channels, config.joints)}")
    t = np.broadcast_to(np.asarray(t), (batch,))
    if np.any(t < 1) or np.any(t > config.timesteps):
        raise ConfigurationError(f"timestep out of range 1..{config.timesteps}: {t.tolist()}")
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != config.text_dim:
        raise ShapeError(f"text embedding dimension {d.shape[-1]} does not match model {config.text_dim}")
    d = np.broadcast_to(d, (batch, config.text_dim))

    s_eff = effective_intensity(config, s_hat, batch, rng)
    cutoff = resolve_cutoff(length, config.cutoff_div)
    multipliers = spectral_multipliers(length, cutoff, s_eff, config.alpha)[:, :, None]
    dim = config.model_dim

    tokens = z.transpose(0, 2, 1, 3).reshape(batch, length, channels * joints)
    h = _linear(params, "in", tokens) + timestep_embedding(np.arange(length), dim)
    c = timestep_embedding(t, dim) + _linear(params, "cond.text", d)
    c = tc.gelu(c @ params["cond.w1"] + params["cond.b1"]) @ params["cond.w2"] + params["cond.b2"]

    def modulation(prefix, name):
        return tc.reshape(_linear(params, prefix + name, c), (batch, 1, dim))

    for j in range(config.depth):
        p = f"block{j}."
        hm = h * (1.0 + modulation(p, "attn_scale")) + modulation(p, "attn_shift")
        attended = _attention(params, p, hm, config.heads)
        h = h + modulate_spectrum(attended, multipliers, axis=1)
        hm = h * (1.0 + modulation(p, "mlp_scale")) + modulation(p, "mlp_shift")
        hidden = tc.gelu(hm @ params[p + "mlp.w1"] + params[p + "mlp.b1"])
        h = h + hidden @ params[p + "mlp.w2"] + params[p + "mlp.b2"]

    out = _linear(params, "out", h)
    out = tc.transpose(tc.reshape(out, (batch, length, channels, joints)), (0, 2, 1, 3))
    if single:
        out = tc.reshape(out, (channels, length, joints))
    return out
