import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

import tensor_core as tc
from errors import ConfigurationError, ShapeError
from losses import bce_distill_loss

logger = logging.getLogger(__name__)

KINEMATIC_AXIS_TOKEN = "##kinematic-axis##"
RICH_DESCRIPTION_WEIGHT = 0.5
RICH_INTENSITY_WEIGHT = 0.5
HEAD_HIDDEN = 256
CURRICULUM_KINDS = ("cosine", "linear", "step", "fixed")
INTENSITY_SOURCES = ("sparse", "rich")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass
class ActionClass:
    id: int
    label: str
    rich_descriptions: list
    s_gt: int

    def __post_init__(self):
        if not self.rich_descriptions:
            raise ConfigurationError(f"class '{self.label}' needs at least one rich description")
        if self.s_gt not in (0, 1):
            raise ConfigurationError(f"class '{self.label}' intensity label must be 0 or 1, got {self.s_gt}")

    def to_dict(self):
        return {"id": self.id, "label": self.label,
                "rich_descriptions": list(self.rich_descriptions), "s_gt": self.s_gt}

    @classmethod
    def from_dict(cls, data):
        return cls(id=int(data["id"]), label=str(data["label"]),
                   rich_descriptions=[str(d) for d in data["rich_descriptions"]], s_gt=int(data["s_gt"]))


@dataclass
class KinematicHead:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def input_dim(self):
        return self.w1.shape[0]

    def to_params(self, prefix="head."):
        return tc.ParameterSet([(prefix + "w1", self.w1), (prefix + "b1", self.b1),
                                (prefix + "w2", self.w2), (prefix + "b2", self.b2)])

    @classmethod
    def from_params(cls, params, prefix="head."):
        return cls(*(np.array(tc.value_of(params[prefix + n])) for n in ("w1", "b1", "w2", "b2")))


@dataclass(frozen=True)
class CurriculumSchedule:
    kind: str = "cosine"
    total: int = 50000
    fixed_p: float = 0.5
    step_interval: int = None

    def __post_init__(self):
        if self.kind not in CURRICULUM_KINDS:
            raise ConfigurationError(f"unknown curriculum kind '{self.kind}', expected one of {CURRICULUM_KINDS}")
        if self.total < 1:
            raise ConfigurationError(f"curriculum length must be >= 1, got {self.total}")


def fnv1a_64(text):
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


@lru_cache(maxsize=4096)
def embed_text(token, dim, global_seed=0):
    """Deterministic unit vector standing in for a frozen text encoder."""
    if dim < 2:
        raise ConfigurationError(f"embedding dimension must be >= 2, got {dim}")
    seed = fnv1a_64(token) ^ (int(global_seed) & MASK64)
    v = np.random.default_rng(seed).standard_normal(dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def embed_sparse(action, dim, global_seed=0):
    return embed_text(action.label, dim, global_seed)


def embed_rich(action, desc_index, dim, global_seed=0):
    if not 0 <= desc_index < len(action.rich_descriptions):
        raise IndexError(f"description {desc_index} out of range for class '{action.label}'")
    v = (embed_text(action.label, dim, global_seed)
         + RICH_DESCRIPTION_WEIGHT * embed_text(action.rich_descriptions[desc_index], dim, global_seed))
    if action.s_gt:
        v = v + RICH_INTENSITY_WEIGHT * action.s_gt * embed_text(KINEMATIC_AXIS_TOKEN, dim, global_seed)
    return v / np.linalg.norm(v)


def init_head(dim, hidden=HEAD_HIDDEN, seed=0):
    rng = np.random.default_rng(seed)
    return KinematicHead(
        w1=rng.standard_normal((dim, hidden)) * math.sqrt(2.0 / dim),
        b1=np.zeros(hidden),
        w2=rng.standard_normal((hidden, 1)) * math.sqrt(1.0 / hidden),
        b2=np.zeros(1),
    )


def head_forward(params, d, prefix="head."):
    h = tc.relu(d @ params[prefix + "w1"] + params[prefix + "b1"])
    out = tc.sigmoid(h @ params[prefix + "w2"] + params[prefix + "b2"])
    return tc.reshape(out, tc.value_of(out).shape[:-1])


def predict_intensity(head, d):
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != head.input_dim:
        raise ShapeError(f"embedding dimension {d.shape[-1]} does not match head input {head.input_dim}")
    s = head_forward(head.to_params(), d.reshape(-1, head.input_dim))
    return float(s[0]) if d.ndim == 1 else s


def head_dataset(classes, dim, global_seed=0, include_sparse=True):
    rows, labels = [], []
    for action in classes:
        if include_sparse:
            rows.append(embed_sparse(action, dim, global_seed))
            labels.append(action.s_gt)
        for i in range(len(action.rich_descriptions)):
            rows.append(embed_rich(action, i, dim, global_seed))
            labels.append(action.s_gt)
    return np.stack(rows), np.asarray(labels, dtype=np.float64)


def train_head(classes, epochs=500, lr=1e-3, dim=64, global_seed=0, seed=0, hidden=HEAD_HIDDEN,
               weight_decay=0.01):
    """Stage-1 distillation: full-batch AdamW on mean BCE over every class embedding."""
    labels = {action.s_gt for action in classes}
    if len(labels) < 2:
        logger.warning(f"intensity labels are all {labels}; head will fit a constant target")
    x, y = head_dataset(classes, dim, global_seed)
    params = init_head(dim, hidden, seed).to_params()
    state = tc.init_optimizer(params, lr=lr, weight_decay=weight_decay)

    def loss_fn(p):
        return bce_distill_loss(head_forward(p, x), y)

    loss = float("nan")
    for epoch in range(epochs):
        loss, grads = tc.value_and_grad(loss_fn, params)
        params, state = tc.adamw_step(params, grads, state)
        if epoch % 100 == 0:
            logger.debug(f"head epoch {epoch}: bce={loss:.6f}")
    head = KinematicHead.from_params(params)
    logger.info(f"kinematic head trained for {epochs} epochs on {len(y)} embeddings, final bce={loss:.6f}")
    return head


def head_accuracy(head, classes, dim, global_seed=0):
    x, y = head_dataset(classes, dim, global_seed)
    predictions = (predict_intensity(head, x) >= 0.5).astype(np.float64)
    return float(np.mean(predictions == y))


def class_embedding(action, dim, global_seed=0, source="sparse"):
    """The embedding ŝ_y is predicted from: the sparse label (what inference conditions on) or the mean rich embedding."""
    if source == "sparse":
        return embed_sparse(action, dim, global_seed)
    if source != "rich":
        raise ConfigurationError(f"unknown intensity source '{source}', expected one of {INTENSITY_SOURCES}")
    v = np.mean([embed_rich(action, i, dim, global_seed) for i in range(len(action.rich_descriptions))], axis=0)
    return v / np.linalg.norm(v)


def class_intensity(head, action, dim, global_seed=0, source="sparse"):
    return predict_intensity(head, class_embedding(action, dim, global_seed, source))


def condition_intensity(head, d):
    """ŝ for each row of a batch of conditioning embeddings; zeros when there is no head."""
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    if head is None:
        return np.zeros(d.shape[0])
    return np.asarray(predict_intensity(head, d), dtype=np.float64).reshape(d.shape[0])


def curriculum_prob(schedule, e):
    e = min(max(e, 0), schedule.total)
    if schedule.kind == "cosine":
        return 0.5 * (1.0 + math.cos(e * math.pi / schedule.total))
    if schedule.kind == "linear":
        return 1.0 - e / schedule.total
    if schedule.kind == "step":
        interval = schedule.step_interval or max(1, schedule.total // 5)
        return 0.5 ** (e // interval)
    return schedule.fixed_p


def sample_condition(action, gamma, rng, dim, global_seed=0):
    """Rich description with probability gamma, otherwise the sparse label."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError(f"curriculum probability must lie in [0, 1], got {gamma}")
    if rng.random() < gamma:
        index = int(rng.integers(len(action.rich_descriptions)))
        return embed_rich(action, index, dim, global_seed), "rich"
    return embed_sparse(action, dim, global_seed), "sparse"
