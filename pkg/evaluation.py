import logging
from dataclasses import replace

import numpy as np

import tensor_core as tc
from checkpoint import Checkpoint, load_checkpoint
from classifier import candidate_intensity, evaluate_accuracy
from conditioning import embed_sparse
from config import ExperimentConfig
from denoiser import denoise
from diffusion import estimate_z0, forward_diffuse
from errors import ProtocolError, ShapeError
from spectral import band_energy, resolve_cutoff
from synthdata import Sample, crop, downsample, stack_latents
from training import model_from_checkpoint, prepare_benchmark

logger = logging.getLogger(__name__)


def _open(checkpoint):
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    return checkpoint


def _resolve_config(checkpoint, config):
    if config is not None:
        return config
    return ExperimentConfig.from_dict(checkpoint.config["experiment"])


def check_latent_shape(model, samples):
    for sample in samples:
        channels, _, joints = sample.z0.shape
        if (channels, joints) != (model.config.channels, model.config.joints):
            raise ShapeError(f"eval latents are [C={channels}, V={joints}] but the checkpoint was trained on "
                             f"[C={model.config.channels}, V={model.config.joints}]")


def apply_transforms(samples, eval_cfg, seed):
    """Optional crop then downsample, applied identically to every test sample."""
    rng = tc.substream(seed, "eval-transform")
    out = []
    for sample in samples:
        z0 = sample.z0
        if eval_cfg.crop is not None:
            z0 = crop(z0, eval_cfg.crop, rng, deterministic=eval_cfg.crop_deterministic)
        if eval_cfg.downsample and eval_cfg.downsample > 1:
            z0 = downsample(z0, eval_cfg.downsample)
        out.append(Sample(z0=z0, class_id=sample.class_id, split=sample.split))
    return out


def run_eval(checkpoint, config=None, benchmark=None):
    """Zero-shot evaluation on the unseen split, with optional transforms and a t_test sweep."""
    checkpoint = _open(checkpoint)
    config = _resolve_config(checkpoint, config)
    model, head = model_from_checkpoint(checkpoint)
    benchmark = benchmark or prepare_benchmark(config)
    if not benchmark.test:
        raise ProtocolError("the unseen split has no test samples")
    check_latent_shape(model, benchmark.test)
    test = apply_transforms(benchmark.test, config.eval, config.seed)
    candidates = benchmark.unseen

    report = evaluate_accuracy(model, head, test, candidates, config.inference, config.seed)
    report["length"] = int(test[0].z0.shape[1])
    report["transforms"] = {"crop": config.eval.crop, "downsample": config.eval.downsample}
    report["fingerprint"] = checkpoint.config.get("fingerprint")
    sweep = []
    for t_test in config.eval.t_test_sweep:
        cfg = replace(config.inference, t_test=int(t_test))
        result = evaluate_accuracy(model, head, test, candidates, cfg, config.seed)
        sweep.append({"t_test": int(t_test), "accuracy": result["accuracy"]})
    if sweep:
        report["sweep"] = sweep
    return report


def reconstruct(model, head, samples, classes_by_id, inference, seed):
    """Estimated clean latents at t_test under each sample's true-class condition."""
    out = []
    for index, sample in enumerate(samples):
        action = classes_by_id[sample.class_id]
        eps = tc.substream(seed, "eval", index, 0).standard_normal(sample.z0.shape)
        z_t = forward_diffuse(sample.z0, inference.t_test, eps, model.schedule)
        d = embed_sparse(action, model.config.text_dim, model.embed_seed)
        s_hat = candidate_intensity(model, head, action, inference)
        eps_hat = tc.value_of(denoise(model.params, model.config, z_t, inference.t_test, d, s_hat,
                                      rng=tc.substream(seed, "gating", index, 0)))
        out.append(estimate_z0(z_t, eps_hat, inference.t_test, model.schedule))
    return np.stack(out)


def run_analyze_spectrum(checkpoints, config=None, benchmark=None):
    """Band-energy curves of ground truth and reconstructions; ``checkpoints`` maps label to checkpoint."""
    if not checkpoints:
        raise ProtocolError("no checkpoints to analyze")
    opened = {label: _open(c) for label, c in checkpoints.items()}
    config = _resolve_config(next(iter(opened.values())), config)
    benchmark = benchmark or prepare_benchmark(config)
    if not benchmark.test:
        raise ProtocolError("the unseen split has no test samples")
    truth = stack_latents(benchmark.test)
    cutoff = resolve_cutoff(truth.shape[2], config.model.cutoff_div)
    truth_report = band_energy(truth, cutoff)
    result = {"cutoff": cutoff, "t_test": config.inference.t_test, "ground_truth": truth_report.to_dict(),
              "models": {}}
    for label, checkpoint in opened.items():
        model, head = model_from_checkpoint(checkpoint)
        check_latent_shape(model, benchmark.test)
        recon = reconstruct(model, head, benchmark.test, benchmark.class_set.by_id(), config.inference, config.seed)
        report = band_energy(recon, cutoff)
        gap = float(np.mean(np.abs(np.asarray(report.high) - np.asarray(truth_report.high))))
        result["models"][label] = {"reconstruction": report.to_dict(), "high_band_gap": gap}
        logger.info(f"{label}: mean high-band energy gap to ground truth {gap:.6f}")
    return result
