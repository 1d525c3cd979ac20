"""Experiment configuration: defaults, then a JSON file, then dotted overrides, then FDSM_SEED."""
import copy
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

from classifier import InferenceConfig
from conditioning import CurriculumSchedule
from denoiser import DenoiserConfig
from errors import ConfigurationError
from synthdata import MODES

logger = logging.getLogger(__name__)

SEED_ENV = "FDSM_SEED"


@dataclass
class DataConfig:
    num_classes: int = 10
    seen_fraction: float = 0.8
    num_unseen: int = None
    mode: str = "freq-only"
    length: int = 16
    channels: int = 8
    joints: int = 5
    cutoff_div: int = 4
    jitter: float = 0.05
    samples_per_class: int = 32
    test_per_class: int = 8
    n_desc: int = 5
    high_fraction: float = 0.55
    classes_file: str = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown benchmark mode '{self.mode}', expected one of {MODES}")
        if not 0.0 < self.seen_fraction < 1.0:
            raise ConfigurationError(f"seen_fraction must lie in (0, 1), got {self.seen_fraction}")
        if self.samples_per_class < 1 or self.test_per_class < 1:
            raise ConfigurationError("samples_per_class and test_per_class must be >= 1")
        if self.jitter < 0:
            raise ConfigurationError(f"jitter must be >= 0, got {self.jitter}")


@dataclass
class ModelConfig:
    depth: int = 2
    model_dim: int = 32
    heads: int = 1
    cutoff_div: int = 4
    alpha: float = 1.0
    gating: str = "predicted"
    text_dim: int = 64
    mlp_ratio: int = 4
    timesteps: int = 50
    schedule: str = "linear"


@dataclass
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 0.01
    warmup: int = 100
    lambda_freq: float = 1.0
    gamma: float = 1.0
    fixed_noise: bool = False
    srm: bool = True
    freq_loss: bool = True
    curriculum: bool = True
    log_every: int = 500
    record_wallclock: bool = False

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigurationError("iterations and batch_size must be >= 1")
        if not 0 <= self.warmup < self.iterations:
            raise ConfigurationError(f"warmup {self.warmup} must be below iterations {self.iterations}")
        if self.lambda_freq < 0 or self.gamma < 0:
            raise ConfigurationError("lambda_freq and gamma must be >= 0")


@dataclass
class CurriculumConfig:
    kind: str = "cosine"
    total: int = None
    fixed_p: float = 0.5
    step_interval: int = None


@dataclass
class DistillConfig:
    epochs: int = 500
    lr: float = 1e-3
    hidden: int = 256
    weight_decay: float = 0.01


@dataclass
class EvalConfig:
    crop: int = None
    crop_deterministic: bool = True
    downsample: int = None
    t_test_sweep: list = field(default_factory=list)

    def __post_init__(self):
        if self.crop is not None and self.crop < 1:
            raise ConfigurationError(f"crop length must be >= 1, got {self.crop}")
        if self.downsample is not None and self.downsample < 1:
            raise ConfigurationError(f"downsampling factor must be >= 1, got {self.downsample}")


SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "curriculum": CurriculumConfig,
    "inference": InferenceConfig,
    "distill": DistillConfig,
    "eval": EvalConfig,
}


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def __post_init__(self):
        # building these validates the cross-section combinations
        self.denoiser_config()
        self.curriculum_schedule()
        self.inference.check(self.model.timesteps)

    def denoiser_config(self):
        gating = self.model.gating if self.train.srm else "none"
        return DenoiserConfig(
            depth=self.model.depth, model_dim=self.model.model_dim, heads=self.model.heads,
            channels=self.data.channels, length=self.data.length, joints=self.data.joints,
            cutoff_div=self.model.cutoff_div, alpha=self.model.alpha, gating=gating,
            text_dim=self.model.text_dim, mlp_ratio=self.model.mlp_ratio,
            timesteps=self.model.timesteps, schedule=self.model.schedule)

    def curriculum_schedule(self):
        return CurriculumSchedule(kind=self.curriculum.kind, total=self.curriculum.total or self.train.iterations,
                                  fixed_p=self.curriculum.fixed_p, step_interval=self.curriculum.step_interval)

    def to_dict(self):
        out = {name: asdict(getattr(self, name)) for name in SECTIONS}
        out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in SECTIONS.items():
            values = data.get(name, {})
            allowed = {f.name for f in fields(section_cls)}
            extra = set(values) - allowed
            if extra:
                raise ConfigurationError(f"unknown keys in '{name}': {sorted(extra)}")
            kwargs[name] = section_cls(**values)
        return cls(seed=int(data.get("seed", 0)), **kwargs)


def parse_value(text):
    """JSON literal when it parses (numbers, booleans, null, lists), else the raw string."""
    if not isinstance(text, str):
        return text
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def merge(base, updates, path=""):
    for key, value in updates.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key '{where}' is a section, got {value!r}")
            merge(base[key], value, where + ".")
        else:
            base[key] = value
    return base


def apply_override(tree, dotted, value):
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigurationError(f"unknown config key '{dotted}'")
        node = node[key]
    if keys[-1] not in node or isinstance(node[keys[-1]], dict):
        raise ConfigurationError(f"unknown config key '{dotted}'")
    node[keys[-1]] = parse_value(value)


def load_config(path=None, overrides=None, environ=None, base=None):
    """Resolve an ExperimentConfig; ``overrides`` maps dotted keys to values or strings.

    ``base`` replaces the built-in defaults, e.g. with the config embedded in a checkpoint.
    """
    environ = os.environ if environ is None else environ
    tree = copy.deepcopy(base if base is not None else ExperimentConfig().to_dict())
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                merge(tree, json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read config file {path}: {e}") from e
        logger.debug(f"loaded config file {path}")
    for dotted, value in (overrides or {}).items():
        apply_override(tree, dotted, value)

    seed = environ.get(SEED_ENV)
    if seed:
        try:
            tree["seed"] = int(seed)
        except ValueError as e:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got '{seed}'") from e
        logger.info(f"master seed {tree['seed']} taken from {SEED_ENV}")
    try:
        return ExperimentConfig.from_dict(tree)
    except TypeError as e:
        raise ConfigurationError(f"invalid config value: {e}") from e


def parse_set_options(pairs):
    """``key=value`` strings from ``--set`` into an override mapping."""
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"--set expects dotted.key=value, got '{pair}'")
        out[key.strip()] = value
    return out
