"""Ablation matrices: every cell is a set of dotted config overrides, trained and evaluated per seed."""
import logging

from classifier import aggregate_trials
from config import ExperimentConfig, apply_override
from evaluation import run_eval
from helpers import fingerprint, format_float, summarize, write_csv
from models import AblationCell, completed_cells, record
from training import prepare_benchmark, run_distill, run_train, to_checkpoint

logger = logging.getLogger(__name__)

ROW_HEADER = ["matrix", "cell", "seed", "fingerprint", "status", "accuracy", "error"]
SUMMARY_HEADER = ["matrix", "cell", "mean", "std", "median", "n", "failed"]
T_TEST_SWEEP = (10, 20, 25, 30, 40, 50)
EVAL_SECTIONS = ("eval", "inference")


def _robustness(base):
    length = base.data.length
    crops = [(name, length // div) for name, div in (("crop L/2", 2), ("crop L/4", 4))]
    for name, size in crops:
        if size < 1:
            logger.warning(f"skipping robustness cell '{name}': L={length} is too short")
    return [
        ("original", {}),
        *[(name, {"eval.crop": size}) for name, size in crops if size >= 1],
        ("downsample 1/2", {"eval.downsample": 2}),
        ("downsample 1/4", {"eval.downsample": 4}),
    ]


PRESETS = {
    "components": lambda base: [
        ("full", {}),
        ("w/o SG-SRM", {"train.srm": False}),
        ("w/o L_freq", {"train.freq_loss": False}),
        ("w/o curriculum", {"train.curriculum": False}),
    ],
    "incremental": lambda base: [
        ("baseline", {"train.srm": False, "train.freq_loss": False, "train.curriculum": False}),
        ("+SG-SRM", {"train.freq_loss": False, "train.curriculum": False}),
        ("+L_freq", {"train.curriculum": False}),
        ("+curriculum", {}),
    ],
    "noise": lambda base: [("random", {}), ("fixed", {"train.fixed_noise": True})],
    "cutoff": lambda base: [(f"M=L/{div}", {"model.cutoff_div": div}) for div in (8, 4, 2)],
    "curriculum": lambda base: [(kind, {"curriculum.kind": kind}) for kind in ("cosine", "linear", "step", "fixed")],
    "gating": lambda base: [(mode, {"model.gating": mode}) for mode in ("predicted", "none", "uniform", "random")],
    "lambda_freq": lambda base: [(f"lambda={v}", {"train.lambda_freq": v}) for v in (0.5, 1.0, 5.0)],
    "alpha": lambda base: [(f"alpha={v}", {"model.alpha": v}) for v in (0.5, 1.0, 1.5)],
    "robustness": _robustness,
    "t_test": lambda base: [(f"t_test={t}", {"inference.t_test": t}) for t in T_TEST_SWEEP],
}


def preset_cells(name, base):
    if name not in PRESETS:
        raise KeyError(f"unknown ablation matrix '{name}', expected one of {sorted(PRESETS)}")
    return PRESETS[name](base)


def cell_config(base, overrides, seed):
    tree = base.to_dict()
    for key, value in overrides.items():
        apply_override(tree, key, value)
    tree["seed"] = seed
    return ExperimentConfig.from_dict(tree)


def training_key(config):
    tree = config.to_dict()
    for section in EVAL_SECTIONS:
        tree.pop(section)
    return fingerprint(tree)


class AblationRunner:
    """Runs cells; models are shared between cells that differ only in eval/inference settings."""

    def __init__(self, matrix, base, seeds=None, cells=None, resume=False, ledger=False, progress=False):
        self.matrix = matrix
        self.base = base
        self.seeds = list(seeds) if seeds else [base.seed]
        self.cells = cells if cells is not None else preset_cells(matrix, base)
        self.resume = resume
        self.ledger = ledger or resume
        self.progress = progress
        self._trained = {}

    def _train(self, config):
        key = training_key(config)
        if key not in self._trained:
            benchmark = prepare_benchmark(config)
            head, _ = run_distill(config, benchmark=benchmark)
            result = run_train(config, head, benchmark=benchmark, progress=self.progress)
            self._trained[key] = (result, benchmark)
        return self._trained[key]

    def _evaluate(self, config):
        result, benchmark = self._train(config)
        return run_eval(to_checkpoint(config, result), config, benchmark=benchmark)["accuracy"]

    def run(self):
        done = completed_cells(self.matrix) if self.resume else {}
        rows = []
        for cell, overrides in self.cells:
            for seed in self.seeds:
                rows.append(self._run_cell(cell, overrides, seed, done))
        return rows

    def _run_cell(self, cell, overrides, seed, done):
        fp, accuracy, status, error = "", None, "ok", ""
        try:
            config = cell_config(self.base, overrides, seed)
            fp = fingerprint(config.to_dict())
            if (cell, seed, fp) in done:
                logger.info(f"[{self.matrix}] {cell} seed={seed}: already in ledger, skipping")
                accuracy = done[(cell, seed, fp)]
            else:
                accuracy = self._evaluate(config)
                logger.info(f"[{self.matrix}] {cell} seed={seed}: accuracy {accuracy:.4f}")
                if self.ledger:
                    record(AblationCell(matrix=self.matrix, cell=cell, seed=seed, fingerprint=fp,
                                        status=status, accuracy=accuracy))
        except Exception as e:
            status, error = "failed", f"{type(e).__name__}: {e}"
            logger.error(f"[{self.matrix}] {cell} seed={seed} failed: {error}")
            if self.ledger:
                record(AblationCell(matrix=self.matrix, cell=cell, seed=seed, fingerprint=fp or "-",
                                    status=status, error=error))
        return {"matrix": self.matrix, "cell": cell, "seed": seed, "fingerprint": fp, "status": status,
                "accuracy": accuracy, "error": error}


def summarize_rows(rows):
    out, order = {}, []
    for row in rows:
        if row["cell"] not in out:
            order.append(row["cell"])
            out[row["cell"]] = {"matrix": row["matrix"], "values": [], "failed": 0}
        if row["status"] == "ok":
            out[row["cell"]]["values"].append(row["accuracy"])
        else:
            out[row["cell"]]["failed"] += 1
    summary = []
    for cell in order:
        values = out[cell]["values"]
        stats = aggregate_trials(values) if values else summarize(values)
        summary.append({"matrix": out[cell]["matrix"], "cell": cell, **stats, "failed": out[cell]["failed"]})
    return summary


def run_ablation(matrix, base, seeds=None, out_path=None, summary_path=None, resume=False, ledger=False,
                 cells=None, progress=False):
    rows = AblationRunner(matrix, base, seeds, cells, resume, ledger, progress).run()
    summary = summarize_rows(rows)
    if out_path:
        write_csv(out_path, ROW_HEADER, [
            [r["matrix"], r["cell"], r["seed"], r["fingerprint"], r["status"],
             "" if r["accuracy"] is None else format_float(r["accuracy"]), r["error"]] for r in rows])
    if summary_path:
        write_csv(summary_path, SUMMARY_HEADER, [
            [s["matrix"], s["cell"], format_float(s["mean"]), format_float(s["std"]), format_float(s["median"]),
             s["n"], s["failed"]] for s in summary])
    return rows, summary
