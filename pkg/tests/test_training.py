import numpy as np
import pytest

from checkpoint import encode_checkpoint, load_checkpoint
from conditioning import predict_intensity
from denoiser import denoise
from errors import CheckpointError
from training import (FIXED_NOISE_KEY, load_head, model_from_checkpoint, prepare_benchmark, run_distill, run_train,
                      to_checkpoint)


@pytest.fixture
def experiment(tiny_experiment):
    return tiny_experiment()


@pytest.fixture
def benchmark(experiment):
    return prepare_benchmark(experiment)


@pytest.fixture
def head(experiment, benchmark):
    return run_distill(experiment, benchmark=benchmark)[0]


def test_benchmark_splits(benchmark, experiment):
    assert {s.split for s in benchmark.train} == {"seen"}
    assert {s.split for s in benchmark.test} == {"unseen"}
    assert len(benchmark.train) == len(benchmark.seen) * experiment.data.samples_per_class
    assert len(benchmark.test) == len(benchmark.unseen) * experiment.data.test_per_class


def test_distilled_head_round_trips_through_checkpoint(experiment, benchmark, tmp_path):
    path = tmp_path / "head.ckpt"
    head, accuracy = run_distill(experiment, out_path=path, benchmark=benchmark)
    loaded, checkpoint = load_head(path)
    assert checkpoint.config["kind"] == "head"
    assert checkpoint.config["head_accuracy"] == accuracy
    np.testing.assert_array_equal(loaded.w1, head.w1)


def test_training_records_every_iteration(experiment, head, benchmark):
    result = run_train(experiment, head, benchmark=benchmark, progress=False)
    assert [r.iteration for r in result.records] == list(range(1, 7))
    assert all(np.isfinite(r.l_total) for r in result.records)
    assert all(r.seconds == 0.0 for r in result.records)
    assert result.records[0].gamma == 1.0
    assert set(result.intensities) == {a.id for a in benchmark.class_set.classes}


def test_without_frequency_loss(tiny_experiment, head):
    config = tiny_experiment(**{"train.freq_loss": False})
    result = run_train(config, head, progress=False)
    for r in result.records:
        assert r.l_freq == 0.0
        assert r.l_total == r.l_diff


def test_without_curriculum_uses_sparse_labels_only(tiny_experiment, head):
    result = run_train(tiny_experiment(**{"train.curriculum": False}), head, progress=False)
    assert all(r.gamma == 0.0 for r in result.records)


def test_training_is_bitwise_reproducible(experiment, head, tmp_path):
    a = run_train(experiment, head, metrics_path=tmp_path / "a.csv", progress=False)
    b = run_train(experiment, head, metrics_path=tmp_path / "b.csv", progress=False)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    ca, cb = to_checkpoint(experiment, a), to_checkpoint(experiment, b)
    assert encode_checkpoint(ca.config, ca.arrays) == encode_checkpoint(cb.config, cb.arrays)


def test_seed_changes_training(tiny_experiment, head):
    a = run_train(tiny_experiment(seed=1), head, progress=False)
    b = run_train(tiny_experiment(seed=2), head, progress=False)
    assert a.records[-1].l_total != b.records[-1].l_total


def test_fixed_noise_is_stored(tiny_experiment, head, tmp_path):
    config = tiny_experiment(**{"train.fixed_noise": True})
    path = tmp_path / "model.ckpt"
    result = run_train(config, head, out_path=path, progress=False)
    checkpoint = load_checkpoint(path)
    np.testing.assert_array_equal(checkpoint.arrays[FIXED_NOISE_KEY], result.fixed_noise)
    assert result.fixed_noise.shape[0] == config.train.batch_size


def test_model_checkpoint_restores_predictions(experiment, head, tmp_path, rng):
    path = tmp_path / "model.ckpt"
    result = run_train(experiment, head, out_path=path, progress=False)
    model, restored_head = model_from_checkpoint(path)
    np.testing.assert_array_equal(restored_head.w2, head.w2)
    np.testing.assert_array_equal(model.schedule.alpha_bar, result.model.schedule.alpha_bar)
    cfg = model.config
    z = rng.normal(size=(cfg.channels, cfg.length, cfg.joints))
    d = rng.normal(size=cfg.text_dim)
    expected = denoise(result.model.params, result.model.config, z, 10, d, 0.4)
    np.testing.assert_array_equal(denoise(model.params, cfg, z, 10, d, 0.4), expected)


def test_head_checkpoint_is_not_a_model(experiment, benchmark, tmp_path):
    path = tmp_path / "head.ckpt"
    run_distill(experiment, out_path=path, benchmark=benchmark)
    with pytest.raises(CheckpointError):
        model_from_checkpoint(path)


def test_training_without_head_runs_ungated(experiment, benchmark):
    result = run_train(experiment, None, benchmark=benchmark, progress=False)
    assert set(result.intensities.values()) == {0.0}


def test_batch_intensity_comes_from_the_embedding_fed_in(tiny_experiment, head, benchmark, monkeypatch):
    import training

    seen = []

    def recording_denoise(params, cfg, z_t, t, d, s_hat, rng=None):
        seen.append((np.array(d), np.array(s_hat)))
        return denoise(params, cfg, z_t, t, d, s_hat, rng=rng)

    monkeypatch.setattr(training, "denoise", recording_denoise)
    batches = {}
    for p in (1.0, 0.0):
        seen.clear()
        config = tiny_experiment(**{"curriculum.kind": "fixed", "curriculum.fixed_p": p, "train.iterations": 3})
        run_train(config, head, benchmark=benchmark, progress=False)
        for d, s_hat in seen:
            np.testing.assert_allclose(s_hat, predict_intensity(head, d), atol=1e-12)
        batches[p] = seen[0]
    rich, sparse = batches[1.0], batches[0.0]
    assert not np.allclose(rich[0], sparse[0])
    assert not np.allclose(rich[1], sparse[1])
