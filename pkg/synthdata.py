"""Synthetic skeleton-latent benchmark.

Every sample is a sum of orthonormal DCT basis rows, so its spectrum is known exactly:
a low-band template (k < M) carrying the "pose topology" and, for high-intensity
classes, a class-specific set of high-band frequencies (k >= M) on the extremity
joints. In freq-only mode all classes share one low-band template, so only the high
band tells them apart.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from conditioning import ActionClass
from errors import ConfigurationError, ShapeError
from spectral import dct_matrix, resolve_cutoff

logger = logging.getLogger(__name__)

MODES = ("freq-only", "mixed")
HIGH_INTENSITY_FRACTION = 0.55
HIGH_AMPLITUDE_RANGE = (0.5, 1.0)
DEFAULT_JITTER = 0.05
DEFAULT_N_DESC = 5

BODY_PARTS = ["wrists", "elbows", "shoulders", "knees", "ankles", "hips", "torso", "head"]
PHASES = ["preparation", "execution", "recovery"]
HIGH_DYNAMICS = ["rapid, repeated limb transitions", "sharp bursts of speed", "fast jitter-like oscillation",
                 "abrupt direction changes", "vigorous rhythmic strikes"]
LOW_DYNAMICS = ["slow, steady posture changes", "smooth and sustained motion", "a held, stable pose",
                "gentle continuous drift", "calm, even rhythm"]


@dataclass
class ClassSignature:
    class_id: int
    low_freqs: tuple
    low_amps: np.ndarray
    high_freqs: tuple
    high_amps: np.ndarray
    intensity: float
    jitter: float = DEFAULT_JITTER
    split: str = "seen"

    def __post_init__(self):
        for k in tuple(self.low_freqs) + tuple(self.high_freqs):
            if k < 0:
                raise ConfigurationError(f"negative frequency {k} in class {self.class_id}")
        if not np.all(np.isfinite(self.low_amps)) or not np.all(np.isfinite(self.high_amps)):
            raise ConfigurationError(f"non-finite amplitudes in class {self.class_id}")
        if self.intensity == 0 and np.any(self.high_amps != 0):
            raise ConfigurationError(f"low-intensity class {self.class_id} must have no high-band amplitude")

    @property
    def channels(self):
        return self.low_amps.shape[1]

    @property
    def joints(self):
        return self.low_amps.shape[2]


@dataclass
class Sample:
    z0: np.ndarray
    class_id: int
    split: str = "seen"

    def to_dict(self):
        return {"class_id": self.class_id, "split": self.split, "z0": self.z0.tolist()}

    @classmethod
    def from_dict(cls, data):
        z0 = np.asarray(data["z0"], dtype=np.float64)
        if z0.ndim != 3 or not np.all(np.isfinite(z0)):
            raise ShapeError(f"sample z0 must be a finite [C, L, V] array, got shape {z0.shape}")
        return cls(z0=z0, class_id=int(data["class_id"]), split=str(data["split"]))


@dataclass
class ClassSet:
    classes: list
    signatures: list
    mode: str = "freq-only"
    length: int = 16
    cutoff: int = 4
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(zip(self.classes, self.signatures))

    def __len__(self):
        return len(self.classes)

    def split(self, name):
        return [a for a, s in self if s.split == name]

    def by_id(self):
        return {a.id: a for a in self.classes}


def synthesize_descriptions(label, s_gt, n_desc, rng):
    dynamics = HIGH_DYNAMICS if s_gt else LOW_DYNAMICS
    out = []
    for n in range(n_desc):
        parts = rng.choice(BODY_PARTS, size=2, replace=False)
        out.append(f"{label} ({n + 1}): during {PHASES[n % len(PHASES)]} the {parts[0]} and {parts[1]} "
                   f"move with {dynamics[n % len(dynamics)]}")
    return out


def _intensity_labels(num_classes, rng, high_fraction):
    n_high = int(round(high_fraction * num_classes))
    n_high = min(max(n_high, 1), num_classes - 1)
    labels = np.zeros(num_classes, dtype=int)
    labels[:n_high] = 1
    return rng.permutation(labels)


def _low_template(cutoff, channels, joints, rng):
    decay = 1.0 / (np.arange(cutoff) + 1.0)
    return rng.standard_normal((cutoff, channels, joints)) * decay[:, None, None]


def _unseen_ids(classes, num_unseen, rng, mode):
    order = [int(i) for i in rng.permutation(len(classes))]
    unseen, seen = order[len(order) - num_unseen:], order[:len(order) - num_unseen]
    if mode == "freq-only" and num_unseen >= 2:
        # low-intensity classes share the whole spectrum here; keep exactly one unseen when possible
        low_unseen = [i for i in unseen if classes[i].s_gt == 0]
        high_seen = [i for i in seen if classes[i].s_gt == 1]
        for i in low_unseen[1:]:
            if not high_seen:
                break
            j = high_seen.pop(0)
            unseen[unseen.index(i)] = j
            seen[seen.index(j)] = i
        low_seen = [i for i in seen if classes[i].s_gt == 0]
        if not low_unseen and len(low_seen) > 1:
            i, j = unseen[0], low_seen[0]
            unseen[0] = j
            seen[seen.index(j)] = i
    return set(unseen)


def generate_class_set(num_classes, seen_fraction=0.8, rng=None, mode="freq-only", length=16, channels=8,
                       joints=5, cutoff_div=4, jitter=DEFAULT_JITTER, n_desc=DEFAULT_N_DESC,
                       high_fraction=HIGH_INTENSITY_FRACTION, num_unseen=None, classes=None):
    """Build (ActionClass, ClassSignature) pairs; ``classes`` reuses catalog definitions."""
    if rng is None:
        rng = np.random.default_rng(0)
    if classes is not None:
        num_classes = len(classes)
    if num_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {num_classes}")
    if mode not in MODES:
        raise ConfigurationError(f"unknown benchmark mode '{mode}', expected one of {MODES}")
    cutoff = resolve_cutoff(length, cutoff_div)
    if cutoff >= length:
        raise ConfigurationError(f"cutoff M={cutoff} leaves no high band for L={length}")
    if num_unseen is None:
        num_unseen = num_classes - int(round(seen_fraction * num_classes))
    if not 0 < num_unseen <= num_classes:
        raise ConfigurationError(f"unseen class count {num_unseen} outside 1..{num_classes}")

    if classes is None:
        labels = _intensity_labels(num_classes, rng, high_fraction)
        classes = []
        for i in range(num_classes):
            label = f"action {i:03d}"
            classes.append(ActionClass(id=i, label=label, s_gt=int(labels[i]),
                                       rich_descriptions=synthesize_descriptions(label, labels[i], n_desc, rng)))
    unseen = _unseen_ids(classes, num_unseen, rng, mode)

    available = [int(k) for k in rng.permutation(np.arange(cutoff, length))]
    per_class = max(1, len(available) // num_classes)
    if per_class * num_classes > len(available):
        logger.warning(f"{num_classes} classes share {len(available)} high-band frequencies; "
                       f"signatures will overlap")
    extremities = np.arange(joints // 2, joints)
    shared_low = _low_template(cutoff, channels, joints, rng)

    signatures = []
    for i, action in enumerate(classes):
        low = shared_low if mode == "freq-only" else _low_template(cutoff, channels, joints, rng)
        freqs = tuple(available[(i * per_class + j) % len(available)] for j in range(per_class))
        amps = np.zeros((per_class, channels, joints))
        lo, hi = HIGH_AMPLITUDE_RANGE
        pattern = rng.uniform(lo, hi, size=(per_class, channels, len(extremities)))
        pattern *= rng.choice([-1.0, 1.0], size=pattern.shape)
        amps[:, :, extremities] = pattern * action.s_gt
        signatures.append(ClassSignature(
            class_id=action.id, low_freqs=tuple(range(cutoff)), low_amps=low.copy(), high_freqs=freqs,
            high_amps=amps, intensity=float(action.s_gt), jitter=jitter,
            split="unseen" if i in unseen else "seen"))
    n_high = sum(a.s_gt for a in classes)
    logger.info(f"generated {num_classes} {mode} classes ({n_high} high-intensity, {len(unseen)} unseen)")
    return ClassSet(classes=classes, signatures=signatures, mode=mode, length=length, cutoff=cutoff)


def clean_signal(sig, length):
    basis = dct_matrix(length)
    z = np.einsum("kcv,kl->clv", sig.low_amps, basis[list(sig.low_freqs)])
    if sig.high_freqs:
        z = z + np.einsum("kcv,kl->clv", sig.high_amps, basis[list(sig.high_freqs)])
    return z


def synth_sample(sig, rng, length=16):
    z0 = clean_signal(sig, length)
    if sig.jitter > 0:
        z0 = z0 + rng.normal(0.0, sig.jitter, size=z0.shape)
    return Sample(z0=z0, class_id=sig.class_id, split=sig.split)


def build_dataset(class_set, samples_per_class, rng):
    samples = []
    for _, sig in class_set:
        for _ in range(samples_per_class):
            samples.append(synth_sample(sig, rng, class_set.length))
    return samples


def stack_latents(samples):
    return np.stack([s.z0 for s in samples])


def crop(z0, new_length, rng=None, deterministic=False):
    """Contiguous temporal window; start 0 when deterministic or no generator is given."""
    length = z0.shape[-2]
    if not 1 <= new_length <= length:
        raise ShapeError(f"crop length {new_length} outside 1..{length}")
    start = 0 if deterministic or rng is None else int(rng.integers(0, length - new_length + 1))
    return z0[..., start:start + new_length, :].copy()


def downsample(z0, factor):
    length = z0.shape[-2]
    if factor < 1 or length % factor:
        raise ShapeError(f"sequence length {length} not divisible by downsampling factor {factor}")
    return z0[..., ::factor, :].copy()


def export_jsonl(samples, path):
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(json.dumps(sample.to_dict()) + "\n")
    logger.info(f"exported {len(samples)} samples to {path}")


def import_jsonl(path):
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                samples.append(Sample.from_dict(json.loads(line)))
    logger.debug(f"imported {len(samples)} samples from {path}")
    return samples
