"""One-step diffusion classifier.

A test latent is noised once at ``t_test``; every candidate label conditions a noise
prediction and the label whose prediction lands closest to the injected noise wins.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np

import tensor_core as tc
from conditioning import INTENSITY_SOURCES, class_intensity, embed_sparse
from denoiser import denoise
from diffusion import forward_diffuse
from errors import ConfigurationError, ProtocolError, ShapeError
from helpers import summarize

logger = logging.getLogger(__name__)

AGGREGATES = ("mean", "vote")


@dataclass(frozen=True)
class InferenceConfig:
    t_test: int = 25
    num_noise_seeds: int = 10
    aggregate: str = "mean"
    intensity_source: str = "sparse"

    def __post_init__(self):
        if self.t_test < 1:
            raise ConfigurationError(f"t_test must be >= 1, got {self.t_test}")
        if self.num_noise_seeds < 1:
            raise ConfigurationError(f"need at least one noise seed, got {self.num_noise_seeds}")
        if self.aggregate not in AGGREGATES:
            raise ConfigurationError(f"unknown aggregate '{self.aggregate}', expected one of {AGGREGATES}")
        if self.intensity_source not in INTENSITY_SOURCES:
            raise ConfigurationError(f"unknown intensity source '{self.intensity_source}'")

    def check(self, T):
        if self.t_test > T:
            raise ConfigurationError(f"t_test={self.t_test} exceeds the schedule length T={T}")

    def to_dict(self):
        return asdict(self)


def candidate_intensity(model, head, action, cfg):
    """ŝ for one candidate; a model without a head runs ungated."""
    if head is None:
        return 0.0
    return class_intensity(head, action, model.config.text_dim, model.embed_seed, cfg.intensity_source)


def score_candidate(model, head, z0_u, y_prime, eps_test, cfg, s_hat=None, rng=None):
    z0_u = np.asarray(z0_u, dtype=np.float64)
    if eps_test.shape != z0_u.shape:
        raise ShapeError(f"test noise shape {eps_test.shape} != latent shape {z0_u.shape}")
    cfg.check(model.schedule.T)
    if s_hat is None:
        s_hat = candidate_intensity(model, head, y_prime, cfg)
    d = embed_sparse(y_prime, model.config.text_dim, model.embed_seed)
    z_t = forward_diffuse(z0_u, cfg.t_test, eps_test, model.schedule)
    eps_hat = denoise(model.params, model.config, z_t, cfg.t_test, d, s_hat, rng=rng)
    return float(np.linalg.norm(eps_test - tc.value_of(eps_hat)))


def candidate_distances(model, head, z0_u, candidates, cfg, seed, index=0, intensities=None):
    """Distance matrix [num_noise_seeds, K] over candidates sorted by class id.

    Noise draws depend only on (seed, index, trial), never on the candidate list.
    """
    if not candidates:
        raise ProtocolError("candidate set is empty")
    cfg.check(model.schedule.T)
    z0_u = np.asarray(z0_u, dtype=np.float64)
    ordered = sorted(candidates, key=lambda a: a.id)
    ids = [a.id for a in ordered]
    if intensities is None:
        intensities = {a.id: candidate_intensity(model, head, a, cfg) for a in ordered}
    s_hat = np.array([intensities[i] for i in ids])
    d = np.stack([embed_sparse(a, model.config.text_dim, model.embed_seed) for a in ordered])

    distances = np.empty((cfg.num_noise_seeds, len(ordered)))
    for trial in range(cfg.num_noise_seeds):
        eps = tc.substream(seed, "eval", index, trial).standard_normal(z0_u.shape)
        z_t = forward_diffuse(z0_u, cfg.t_test, eps, model.schedule)
        batch = np.broadcast_to(z_t, (len(ordered),) + z_t.shape)
        gating_rng = tc.substream(seed, "gating", index, trial)
        eps_hat = tc.value_of(denoise(model.params, model.config, batch, cfg.t_test, d, s_hat, rng=gating_rng))
        diff = (eps[None] - eps_hat).reshape(len(ordered), -1)
        distances[trial] = np.linalg.norm(diff, axis=1)
    return ids, distances


def decide(ids, distances, aggregate="mean"):
    # ids are sorted, so argmin/argmax pick the lowest class id on ties
    if aggregate == "mean":
        return ids[int(np.argmin(distances.mean(axis=0)))]
    votes = np.bincount(np.argmin(distances, axis=1), minlength=len(ids))
    return ids[int(np.argmax(votes))]


def classify(model, head, z0_u, candidates, cfg, seed, index=0, intensities=None):
    ids, distances = candidate_distances(model, head, z0_u, candidates, cfg, seed, index, intensities)
    return decide(ids, distances, cfg.aggregate)


def evaluate_accuracy(model, head, test_set, candidates, cfg, seed):
    """Top-1 accuracy over ``test_set`` with confusion counts (rows true, columns predicted)."""
    if not test_set:
        raise ProtocolError("test set is empty")
    ordered = sorted(candidates, key=lambda a: a.id)
    ids = [a.id for a in ordered]
    position = {cid: k for k, cid in enumerate(ids)}
    for sample in test_set:
        if sample.class_id not in position:
            raise ProtocolError(f"test sample of class {sample.class_id} is not among candidates {ids}")

    intensities = {a.id: candidate_intensity(model, head, a, cfg) for a in ordered}
    confusion = np.zeros((len(ids), len(ids)), dtype=int)
    distance_sums = np.zeros((len(ids), len(ids)))
    for index, sample in enumerate(test_set):
        _, distances = candidate_distances(model, head, sample.z0, ordered, cfg, seed, index, intensities)
        predicted = decide(ids, distances, cfg.aggregate)
        row = position[sample.class_id]
        confusion[row, position[predicted]] += 1
        distance_sums[row] += distances.mean(axis=0)

    totals = confusion.sum(axis=1)
    correct = int(np.trace(confusion))
    accuracy = correct / len(test_set)
    per_class = {}
    for k, cid in enumerate(ids):
        if totals[k]:
            per_class[str(cid)] = {"correct": int(confusion[k, k]), "total": int(totals[k]),
                                   "accuracy": float(confusion[k, k] / totals[k])}
    mean_distances = np.divide(distance_sums, np.maximum(totals, 1)[:, None])
    logger.info(f"zero-shot accuracy {accuracy:.4f} ({correct}/{len(test_set)}) at t_test={cfg.t_test}")
    return {
        "accuracy": float(accuracy),
        "per_class": per_class,
        "confusion": confusion.tolist(),
        "class_ids": ids,
        "mean_distances": mean_distances.tolist(),
        "intensities": {str(cid): float(intensities[cid]) for cid in ids},
        "t_test": cfg.t_test,
        "seeds": cfg.num_noise_seeds,
        "aggregate": cfg.aggregate,
    }


def aggregate_trials(accuracies):
    """Mean, population std and median of accuracies from independent master seeds."""
    values = np.asarray(list(accuracies), dtype=np.float64)
    if values.size == 0:
        raise ProtocolError("no trials to aggregate")
    if not np.all(np.isfinite(values)):
        raise ProtocolError(f"non-finite accuracy among trials: {values.tolist()}")
    summary = summarize(values)
    logger.info(f"accuracy over {summary['n']} trials: {summary['mean']:.4f} ± {summary['std']:.4f}")
    return summary
