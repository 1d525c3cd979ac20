"""Two-stage training: kinematic-head distillation, then conditional denoiser training."""
import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

import tensor_core as tc
from checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from class_catalog import load_classes
from conditioning import (KinematicHead, class_intensity, condition_intensity, curriculum_prob, head_accuracy,
                          sample_condition, train_head)
from denoiser import DenoiserConfig, DiffusionModel, build_model, denoise
from diffusion import estimate_z0, forward_diffuse, schedule_from_arrays
from errors import CheckpointError, NonFiniteError, ProtocolError, TrainingDivergedError
from helpers import fingerprint, format_float, write_csv
from losses import SpectralWeightConfig, diffusion_loss, spectral_loss, total_loss
from models import TrainingRun, record
from spectral import resolve_cutoff
from synthdata import build_dataset, generate_class_set, stack_latents

logger = logging.getLogger(__name__)

METRICS_HEADER = ["iteration", "l_diff", "l_freq", "l_total", "lr", "gamma", "seconds"]
HEAD_PREFIX = "head."
PARAM_PREFIX = "params."
FIXED_NOISE_KEY = "train.fixed_noise"


@dataclass
class MetricsRecord:
    iteration: int
    l_diff: float
    l_freq: float
    l_total: float
    lr: float
    gamma: float
    seconds: float = 0.0

    def row(self):
        return [self.iteration] + [format_float(v) for v in
                                   (self.l_diff, self.l_freq, self.l_total, self.lr, self.gamma, self.seconds)]


@dataclass
class Benchmark:
    class_set: object
    train: list
    test: list

    @property
    def seen(self):
        return self.class_set.split("seen")

    @property
    def unseen(self):
        return self.class_set.split("unseen")


@dataclass
class TrainResult:
    model: DiffusionModel
    head: KinematicHead
    records: list = field(default_factory=list)
    intensities: dict = field(default_factory=dict)
    fixed_noise: np.ndarray = None


def prepare_benchmark(config):
    """Class set plus seen-class training and unseen-class test samples, all from the data stream."""
    data = config.data
    catalog = load_classes(data.classes_file) if data.classes_file else None
    class_set = generate_class_set(
        data.num_classes, data.seen_fraction, tc.substream(config.seed, "data", 0), mode=data.mode,
        length=data.length, channels=data.channels, joints=data.joints, cutoff_div=data.cutoff_div,
        jitter=data.jitter, n_desc=data.n_desc, high_fraction=data.high_fraction,
        num_unseen=data.num_unseen, classes=catalog)
    samples = build_dataset(class_set, data.samples_per_class, tc.substream(config.seed, "data", 1))
    tests = build_dataset(class_set, data.test_per_class, tc.substream(config.seed, "data", 2))
    train = [s for s in samples if s.split == "seen"]
    test = [s for s in tests if s.split == "unseen"]
    if not train:
        raise ProtocolError("no seen classes to train on")
    return Benchmark(class_set=class_set, train=train, test=test)


def _derived_seed(master_seed, name):
    return int(tc.substream(master_seed, name).integers(2 ** 31))


def run_distill(config, out_path=None, benchmark=None):
    """Stage 1: fit the kinematic head on every class and optionally persist it."""
    benchmark = benchmark or prepare_benchmark(config)
    classes = benchmark.class_set.classes
    d = config.distill
    head = train_head(classes, epochs=d.epochs, lr=d.lr, dim=config.model.text_dim, global_seed=config.seed,
                      seed=_derived_seed(config.seed, "head"), hidden=d.hidden, weight_decay=d.weight_decay)
    accuracy = head_accuracy(head, classes, config.model.text_dim, config.seed)
    logger.info(f"kinematic head training accuracy {accuracy:.4f} over {len(classes)} classes")
    if out_path:
        meta = {"kind": "head", "experiment": config.to_dict(), "head_accuracy": accuracy,
                "fingerprint": fingerprint(config.to_dict())}
        save_checkpoint(out_path, meta, head.to_params(HEAD_PREFIX))
    return head, accuracy


def load_head(path):
    checkpoint = load_checkpoint(path)
    if not checkpoint.group(HEAD_PREFIX):
        raise CheckpointError(f"{path} holds no kinematic head")
    return KinematicHead.from_params(checkpoint.arrays, HEAD_PREFIX), checkpoint


def class_intensities(head, classes, config):
    if head is None:
        if config.model.gating == "predicted" and config.train.srm:
            logger.warning("no kinematic head given; predicted gating falls back to s=0")
        return {a.id: 0.0 for a in classes}
    return {a.id: class_intensity(head, a, config.model.text_dim, config.seed, config.inference.intensity_source)
            for a in classes}


def run_train(config, head, out_path=None, metrics_path=None, benchmark=None, progress=True, ledger=False):
    """Stage 2: train the denoiser on seen classes with the frozen head."""
    benchmark = benchmark or prepare_benchmark(config)
    train_cfg = config.train
    model_cfg = config.denoiser_config()
    model = build_model(model_cfg, _derived_seed(config.seed, "init"), embed_seed=config.seed)
    schedule = model.schedule
    curriculum = config.curriculum_schedule()
    weights_cfg = SpectralWeightConfig(M=resolve_cutoff(model_cfg.length, model_cfg.cutoff_div),
                                       gamma=train_cfg.gamma, T=schedule.T)

    by_id = benchmark.class_set.by_id()
    intensities = class_intensities(head, benchmark.class_set.classes, config)
    latents = stack_latents(benchmark.train)
    labels = [s.class_id for s in benchmark.train]
    batch = train_cfg.batch_size
    shape = (batch,) + latents.shape[1:]

    batch_rng = tc.substream(config.seed, "batches")
    time_rng = tc.substream(config.seed, "timesteps")
    noise_rng = tc.substream(config.seed, "noise")
    curriculum_rng = tc.substream(config.seed, "curriculum")
    gating_rng = tc.substream(config.seed, "gating")
    fixed_noise = noise_rng.standard_normal(shape) if train_cfg.fixed_noise else None

    params = model.params
    state = tc.init_optimizer(params, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    records = []
    started = time.perf_counter()
    bar = tqdm(range(train_cfg.iterations), disable=not progress, desc="training", leave=False)
    for e in bar:
        idx = batch_rng.integers(len(labels), size=batch)
        z0 = latents[idx]
        t = time_rng.integers(1, schedule.T + 1, size=batch)
        eps = fixed_noise if fixed_noise is not None else noise_rng.standard_normal(shape)
        gamma = curriculum_prob(curriculum, e) if train_cfg.curriculum else 0.0
        d = np.stack([sample_condition(by_id[labels[i]], gamma, curriculum_rng, model_cfg.text_dim, config.seed)[0]
                      for i in idx])
        s_hat = condition_intensity(head, d)
        z_t = forward_diffuse(z0, t, eps, schedule)
        parts = {}

        def loss_fn(p):
            eps_hat = denoise(p, model_cfg, z_t, t, d, s_hat, rng=gating_rng)
            l_diff = diffusion_loss(eps_hat, eps)
            parts["l_diff"] = float(tc.value_of(l_diff))
            if not train_cfg.freq_loss:
                parts["l_freq"] = 0.0
                return l_diff
            z0_hat = estimate_z0(z_t, eps_hat, t, schedule)
            l_freq = spectral_loss(z0, z0_hat, t, weights_cfg)
            parts["l_freq"] = float(tc.value_of(l_freq))
            return total_loss(l_diff, l_freq, train_cfg.lambda_freq)

        try:
            l_total, grads = tc.value_and_grad(loss_fn, params)
        except NonFiniteError as err:
            raise TrainingDivergedError(e + 1, f"primitive '{err.primitive}' produced a non-finite value") from err
        if not math.isfinite(l_total):
            raise TrainingDivergedError(e + 1, f"loss is {l_total}")
        lr = tc.cosine_lr(e + 1, train_cfg.iterations, train_cfg.lr, train_cfg.warmup)
        params, state = tc.adamw_step(params, grads, state, lr=lr)

        seconds = time.perf_counter() - started if train_cfg.record_wallclock else 0.0
        records.append(MetricsRecord(e + 1, parts["l_diff"], parts["l_freq"], l_total, lr, gamma, seconds))
        bar.set_description(f"l_diff {parts['l_diff']:.4f} l_freq {parts['l_freq']:.4f}")
        if (e + 1) % train_cfg.log_every == 0:
            logger.info(f"iteration {e + 1}/{train_cfg.iterations}: l_diff={parts['l_diff']:.6f} "
                        f"l_freq={parts['l_freq']:.6f} lr={lr:.2e} gamma={gamma:.3f}")

    model.params = params
    result = TrainResult(model=model, head=head, records=records, intensities=intensities, fixed_noise=fixed_noise)
    if metrics_path:
        write_metrics(metrics_path, records)
    if out_path:
        save_model(out_path, config, result)
    if ledger:
        last = records[-1]
        record(TrainingRun(fingerprint=fingerprint(config.to_dict()), seed=config.seed,
                           iterations=train_cfg.iterations, final_l_diff=last.l_diff, final_l_freq=last.l_freq,
                           checkpoint_path=out_path))
    return result


def write_metrics(path, records):
    write_csv(path, METRICS_HEADER, [r.row() for r in records])


def to_checkpoint(config, result):
    arrays = {PARAM_PREFIX + name: value for name, value in result.model.params.items()}
    arrays.update(result.model.schedule.arrays())
    if result.head is not None:
        arrays.update(result.head.to_params(HEAD_PREFIX))
    if result.fixed_noise is not None:
        arrays[FIXED_NOISE_KEY] = result.fixed_noise
    meta = {"kind": "model", "experiment": config.to_dict(), "denoiser": result.model.config.to_dict(),
            "embed_seed": result.model.embed_seed, "fingerprint": fingerprint(config.to_dict())}
    return Checkpoint(config=meta, arrays=OrderedDict(arrays))


def save_model(path, config, result):
    checkpoint = to_checkpoint(config, result)
    save_checkpoint(path, checkpoint.config, checkpoint.arrays)


def model_from_checkpoint(checkpoint):
    """(model, head or None) from a loaded model checkpoint."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    if checkpoint.config.get("kind") != "model":
        raise CheckpointError(f"expected a model checkpoint, got kind '{checkpoint.config.get('kind')}'")
    model_cfg = DenoiserConfig.from_dict(checkpoint.config["denoiser"])
    params = tc.ParameterSet((name[len(PARAM_PREFIX):], value)
                             for name, value in checkpoint.group(PARAM_PREFIX).items())
    schedule = schedule_from_arrays(checkpoint.arrays["schedule.beta"], checkpoint.arrays["schedule.alpha_bar"],
                                    model_cfg.schedule)
    head = KinematicHead.from_params(checkpoint.arrays, HEAD_PREFIX) if checkpoint.group(HEAD_PREFIX) else None
    model = DiffusionModel(params=params, config=model_cfg, schedule=schedule,
                           embed_seed=int(checkpoint.config.get("embed_seed", 0)))
    return model, head
