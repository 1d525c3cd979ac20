import logging
import os
import sys

import click

import tensor_core as tc
from ablation import PRESETS, run_ablation
from checkpoint import load_checkpoint
from class_catalog import build_prompts, load_classes
from config import load_config, parse_set_options
from errors import FDSMError
from evaluation import run_analyze_spectrum, run_eval
from helpers import write_json
from synthdata import build_dataset, export_jsonl
from training import load_head, prepare_benchmark, run_distill, run_train

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

logger = logging.getLogger(__name__)


def config_options(func):
    func = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                        help="JSON experiment config.")(func)
    func = click.option("--set", "set_pairs", multiple=True, metavar="KEY=VALUE",
                        help="Override a config key, e.g. --set train.lambda_freq=0.5.")(func)
    func = click.option("--seed", type=int, default=None, help="Master seed.")(func)
    return func


def resolve(config_path, set_pairs, seed=None, base=None, **flags):
    """Config from file, --set pairs and dedicated flags (flags win over --set)."""
    overrides = parse_set_options(set_pairs)
    for key, value in flags.items():
        if value is not None:
            overrides[key] = value
    if seed is not None:
        overrides["seed"] = seed
    return load_config(config_path, overrides, base=base)


def fail(e):
    logger.error(f"{type(e).__name__}: {e}")
    raise click.ClickException(str(e))


@click.group()
@click.option("--log-level", default=lambda: os.environ.get("FDSM_LOG_LEVEL", "INFO"), show_default="INFO",
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.option("--quiet", is_flag=True, help="Hide progress bars.")
@click.pass_context
def cli(ctx, log_level, quiet):
    """Frequency-aware diffusion for zero-shot skeleton action recognition."""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format=LOG_FORMAT)
    ctx.ensure_object(dict)
    ctx.obj["progress"] = not quiet and sys.stderr.isatty()


@cli.command()
@config_options
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Head checkpoint path.")
def distill(config_path, set_pairs, seed, out_path):
    """Stage 1: train and freeze the kinematic intensity head."""
    try:
        config = resolve(config_path, set_pairs, seed)
        _, accuracy = run_distill(config, out_path)
    except FDSMError as e:
        fail(e)
    click.echo(f"head accuracy {accuracy:.4f} -> {out_path}")


@cli.command()
@config_options
@click.option("--head", "head_path", type=click.Path(exists=True, dir_okay=False),
              help="Head checkpoint from `distill`; trained on the fly when omitted.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--metrics", "metrics_path", type=click.Path(dir_okay=False), default=None)
@click.option("--iterations", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lambda-freq", type=float, default=None)
@click.option("--fixed-noise/--random-noise", default=None)
@click.option("--ledger/--no-ledger", default=False, help="Record the run in the run ledger.")
@click.pass_context
def train(ctx, config_path, set_pairs, seed, head_path, out_path, metrics_path, iterations, batch_size,
          lambda_freq, fixed_noise, ledger):
    """Stage 2: train the conditional denoiser on the seen classes."""
    try:
        config = resolve(config_path, set_pairs, seed, **{
            "train.iterations": iterations, "train.batch_size": batch_size,
            "train.lambda_freq": lambda_freq, "train.fixed_noise": fixed_noise})
        benchmark = prepare_benchmark(config)
        if head_path:
            head, _ = load_head(head_path)
        else:
            head, _ = run_distill(config, benchmark=benchmark)
        result = run_train(config, head, out_path, metrics_path, benchmark=benchmark,
                           progress=ctx.obj["progress"], ledger=ledger)
    except FDSMError as e:
        fail(e)
    last = result.records[-1]
    click.echo(f"trained {last.iteration} iterations, l_diff={last.l_diff:.6f} l_freq={last.l_freq:.6f} -> {out_path}")


@cli.command(name="eval")
@config_options
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.option("--t-test", type=int, default=None)
@click.option("--t-test-sweep", default=None, help="Comma-separated t_test values, e.g. 10,20,25,30,40,50.")
@click.option("--crop", type=int, default=None, help="Crop test sequences to this length.")
@click.option("--downsample", type=int, default=None, help="Keep every n-th frame.")
@click.option("--aggregate", type=click.Choice(["mean", "vote"]), default=None)
def evaluate(config_path, set_pairs, seed, checkpoint_path, out_path, t_test, t_test_sweep, crop, downsample,
             aggregate):
    """Zero-shot accuracy on the unseen split."""
    try:
        checkpoint = load_checkpoint(checkpoint_path)
        sweep = [int(v) for v in t_test_sweep.split(",")] if t_test_sweep else None
        config = resolve(config_path, set_pairs, seed, base=checkpoint.config["experiment"], **{
            "inference.t_test": t_test, "eval.t_test_sweep": sweep, "eval.crop": crop,
            "eval.downsample": downsample, "inference.aggregate": aggregate})
        report = run_eval(checkpoint, config)
    except FDSMError as e:
        fail(e)
    if out_path:
        write_json(out_path, report)
    click.echo(f"accuracy {report['accuracy']:.4f} at t_test={report['t_test']}")
    for point in report.get("sweep", []):
        click.echo(f"  t_test={point['t_test']}: {point['accuracy']:.4f}")


@cli.command(name="analyze-spectrum")
@config_options
@click.option("--checkpoint", "checkpoints", required=True, multiple=True, metavar="[LABEL=]PATH",
              help="Checkpoint to analyze; repeat to compare models on the same eval set.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def analyze_spectrum(config_path, set_pairs, seed, checkpoints, out_path):
    """Per-frequency energy of ground-truth and reconstructed unseen latents."""
    labelled = {}
    for item in checkpoints:
        label, sep, path = item.partition("=")
        if not sep:
            label, path = os.path.splitext(os.path.basename(item))[0], item
        labelled[label] = path
    try:
        opened = {label: load_checkpoint(path) for label, path in labelled.items()}
        base = next(iter(opened.values())).config["experiment"]
        config = resolve(config_path, set_pairs, seed, base=base)
        report = run_analyze_spectrum(opened, config)
    except FDSMError as e:
        fail(e)
    write_json(out_path, report)
    for label, entry in report["models"].items():
        click.echo(f"{label}: high-band gap {entry['high_band_gap']:.6f}")


@cli.command()
@config_options
@click.option("--matrix", required=True, type=click.Choice(sorted(PRESETS)))
@click.option("--seeds", default=None, help="Comma-separated master seeds; defaults to the config seed.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--summary", "summary_path", type=click.Path(dir_okay=False), default=None)
@click.option("--resume", is_flag=True, help="Skip cells already completed in the run ledger.")
@click.option("--ledger/--no-ledger", default=False)
@click.pass_context
def ablate(ctx, config_path, set_pairs, seed, matrix, seeds, out_path, summary_path, resume, ledger):
    """Train and evaluate every cell of an ablation matrix."""
    try:
        config = resolve(config_path, set_pairs, seed)
        seed_list = [int(s) for s in seeds.split(",")] if seeds else None
        rows, summary = run_ablation(matrix, config, seed_list, out_path, summary_path, resume=resume,
                                     ledger=ledger, progress=ctx.obj["progress"])
    except FDSMError as e:
        fail(e)
    failed = sum(1 for r in rows if r["status"] != "ok")
    for s in summary:
        click.echo(f"{s['cell']:<20} mean={s['mean']:.4f} std={s['std']:.4f} n={s['n']}")
    if failed:
        click.echo(f"{failed} cell run(s) failed; see {out_path}", err=True)


@cli.command(name="gen-data-export")
@config_options
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="JSONL sample file.")
@click.option("--samples-per-class", type=int, default=None)
@click.option("--classes-out", type=click.Path(dir_okay=False), default=None,
              help="Also write the class definitions and split as JSON.")
def gen_data_export(config_path, set_pairs, seed, out_path, samples_per_class, classes_out):
    """Export a synthetic benchmark as JSON lines."""
    try:
        config = resolve(config_path, set_pairs, seed, **{"data.samples_per_class": samples_per_class})
        benchmark = prepare_benchmark(config)
        samples = build_dataset(benchmark.class_set, config.data.samples_per_class,
                                tc.substream(config.seed, "data", 1))
        export_jsonl(samples, out_path)
    except FDSMError as e:
        fail(e)
    if classes_out:
        write_json(classes_out, [dict(a.to_dict(), split=s.split) for a, s in benchmark.class_set])
    click.echo(f"exported {len(samples)} samples -> {out_path}")


@cli.command(name="gen-prompts")
@click.option("--classes-file", default="classes.json", show_default=True)
@click.option("--n-desc", type=int, default=5, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def gen_prompts(classes_file, n_desc, out_path):
    """Write the offline description and intensity prompts for every class."""
    try:
        prompts = build_prompts(load_classes(classes_file), n_desc)
    except FDSMError as e:
        fail(e)
    write_json(out_path, prompts)
    click.echo(f"wrote prompts for {len(prompts)} classes -> {out_path}")


if __name__ == "__main__":
    cli()
