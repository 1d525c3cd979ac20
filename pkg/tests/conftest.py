import os

import numpy as np
import pytest

from config import load_config
from denoiser import build_model, tiny_config
from tensor_core import ParameterSet

TINY_EXPERIMENT = {
    "data.num_classes": 4,
    "data.seen_fraction": 0.5,
    "data.length": 8,
    "data.channels": 2,
    "data.joints": 2,
    "data.samples_per_class": 4,
    "data.test_per_class": 2,
    "data.n_desc": 2,
    "model.depth": 2,
    "model.model_dim": 8,
    "model.heads": 2,
    "model.text_dim": 8,
    "model.mlp_ratio": 2,
    "train.iterations": 6,
    "train.batch_size": 4,
    "train.warmup": 2,
    "train.log_every": 3,
    "distill.epochs": 20,
    "distill.hidden": 16,
    "inference.num_noise_seeds": 2,
}


def pytest_collection_modifyitems(config, items):
    if os.environ.get("FDSM_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set FDSM_RUN_SLOW=1 to run desk-scale trend checks")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_experiment():
    def build(**overrides):
        values = dict(TINY_EXPERIMENT)
        values.update(overrides)
        return load_config(overrides=values, environ={})

    return build


@pytest.fixture
def tiny_model():
    def build(seed=0, randomize_out=True, **overrides):
        model = build_model(tiny_config(**overrides), seed)
        if randomize_out:
            out_rng = np.random.default_rng(seed + 99)
            params = dict(model.params)
            params["out.w"] = out_rng.normal(0.0, 0.3, size=params["out.w"].shape)
            model.params = ParameterSet(params)
        return model

    return build


@pytest.fixture
def ledger_url(tmp_path, monkeypatch):
    url = f"sqlite:///{tmp_path / 'ledger.db'}"
    monkeypatch.setenv("FDSM_LEDGER_URL", url)
    return url
