import numpy as np
import pytest

from blrf.basis import BasisKind, make_basis
from blrf.checkpoint import load_checkpoint, save_checkpoint
from blrf.errors import ContractError, TrainingError
from blrf.field import FieldConfig, FieldKind, init_field, tv_penalty
from blrf.basis import highpass_penalty
from blrf.model import SceneModel
from blrf.render import SamplingSpec
from blrf.scenes import Dataset, SceneKind, generate_dataset, make_scene
from blrf.training import (AdamState, Optimizer, TrainConfig, adam_step,
                           cyclic_lr, loss_and_grads, photometric_loss,
                           sample_ray_batch, train_loop, train_step)


def tiny_model(seed=0, grid=16, k=4, w=2, basis=BasisKind.NEURAL, dtype=np.float32):
    dens = FieldConfig(grid, k, w, num_channels=1)
    col = FieldConfig(grid, k, w, num_channels=3)
    return SceneModel(
        init_field(dens, seed, FieldKind.DENSITY, dtype=dtype),
        init_field(col, seed + 1, FieldKind.COLOR, dtype=dtype),
        make_basis(basis, w, seed + 2, embed_freqs=2, hidden_width=16, dtype=dtype),
        make_basis(basis, w, seed + 3, embed_freqs=2, hidden_width=16, dtype=dtype),
    )


def tiny_config(**kw):
    defaults = dict(batch_rays=64, iters=10, seed=0, lr_cycle_period=100)
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def blob_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds") / "static"
    generate_dataset(make_scene(SceneKind.STATIC_BLOB), 4, out,
                     image_size=16, n_quad_samples=256)
    return Dataset.load(out)


@pytest.fixture(scope="module")
def flat_dataset(tmp_path_factory):
    spec = make_scene(SceneKind.STATIC_BLOB)
    spec.peak_density = 0.0  # nothing in the scene: images equal the background
    out = tmp_path_factory.mktemp("ds") / "flat"
    generate_dataset(spec, 3, out, image_size=16, n_quad_samples=32)
    return Dataset.load(out)


class TestPhotometricLoss:
    def test_equal_batches_zero(self, rng):
        a = rng.random((16, 3))
        assert photometric_loss(a, a) == 0.0

    def test_uniform_offset(self):
        pred = np.zeros((8, 3))
        gt = pred.copy()
        pred[:, 0] += 0.1
        assert photometric_loss(pred, gt) == pytest.approx(0.01, abs=1e-15)

    def test_matches_naive_loop(self, rng):
        pred, gt = rng.random((32, 3)), rng.random((32, 3))
        want = np.mean([sum((pred[i, c] - gt[i, c]) ** 2 for c in range(3))
                        for i in range(32)])
        assert photometric_loss(pred, gt) == pytest.approx(want, rel=1e-12)

    def test_size_mismatch_rejected(self):
        with pytest.raises(ContractError):
            photometric_loss(np.zeros((4, 3)), np.zeros((5, 3)))


class TestCyclicLr:
    def test_cycle_start_is_max(self):
        assert cyclic_lr(0, 0.02, 2000, 0.1) == 0.02

    def test_trough_at_half_period(self):
        assert cyclic_lr(1000, 0.02, 2000, 0.1) == pytest.approx(0.002)

    def test_periodic(self):
        assert cyclic_lr(2000, 0.02, 2000, 0.1) == pytest.approx(0.02)
        assert cyclic_lr(2500, 0.02, 2000, 0.1) == pytest.approx(
            cyclic_lr(500, 0.02, 2000, 0.1))

    def test_short_period_rejected(self):
        with pytest.raises(ContractError):
            cyclic_lr(0, 0.02, 1, 0.1)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = [np.array([1.0, -2.0])]
        state = AdamState.for_params(p)
        adam_step(p, [np.zeros(2)], state, lr=0.1)
        assert np.array_equal(p[0], [1.0, -2.0])

    def test_first_step_magnitude(self):
        p = [np.array([0.0])]
        state = AdamState.for_params(p)
        adam_step(p, [np.array([1.0])], state, lr=0.01, eps=1e-8)
        assert p[0][0] == pytest.approx(-0.01, rel=1e-6)

    def test_ten_step_transcript_matches_reference(self):
        # independent naive Adam on f(x) = x^2, scalar, transcription by loop
        beta1, beta2, eps, lr = 0.9, 0.99, 1e-8, 0.05
        x_ref, m_ref, v_ref = 1.3, 0.0, 0.0
        transcript = []
        for t in range(1, 11):
            g = 2.0 * x_ref
            m_ref = beta1 * m_ref + (1 - beta1) * g
            v_ref = beta2 * v_ref + (1 - beta2) * g * g
            mh = m_ref / (1 - beta1 ** t)
            vh = v_ref / (1 - beta2 ** t)
            x_ref -= lr * mh / (np.sqrt(vh) + eps)
            transcript.append(x_ref)

        p = [np.array([1.3])]
        state = AdamState.for_params(p)
        got = []
        for _ in range(10):
            g = 2.0 * p[0]
            adam_step(p, [g.copy()], state, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            got.append(p[0][0])
        assert np.allclose(got, transcript, atol=1e-12)

    def test_nonfinite_gradient_rejected(self):
        p = [np.array([1.0])]
        state = AdamState.for_params(p)
        with pytest.raises(TrainingError):
            adam_step(p, [np.array([np.nan])], state, lr=0.1)


class TestTrainStep:
    def test_flat_scene_is_already_optimal(self, flat_dataset):
        model = tiny_model()
        model.density_field.config = FieldConfig(16, 4, 2, num_channels=1,
                                                 density_shift=-40.0)
        before = [arr.copy() for _, arr in model.parameters()]
        config = tiny_config(lambda1=0.0, lambda2=0.0)
        opt = Optimizer.for_model(model)
        spec = flat_dataset.sampling_spec(16, perturb=True)
        breakdown = train_step(model, flat_dataset, config, opt, 0, spec)
        assert breakdown.photometric < 1e-12
        for (name, arr), prev in zip(model.parameters(), before):
            assert np.abs(arr - prev).max() < 1e-5, name

    def test_identical_seed_identical_sequence(self, blob_dataset):
        def run():
            model = tiny_model(seed=4)
            config = tiny_config(iters=5, seed=11)
            opt = Optimizer.for_model(model)
            spec = blob_dataset.sampling_spec(24, perturb=True)
            return [train_step(model, blob_dataset, config, opt, it, spec).as_tuple()
                    for it in range(5)]

        assert run() == run()

    def test_loss_decreases_statistically(self, blob_dataset):
        # median over 5 seeds: late-window loss below the early window
        drops = []
        for seed in range(5):
            model = tiny_model(seed=seed)
            config = tiny_config(iters=200, seed=seed)
            opt = Optimizer.for_model(model)
            spec = blob_dataset.sampling_spec(24, perturb=True)
            losses = [train_step(model, blob_dataset, config, opt, it, spec).total
                      for it in range(200)]
            drops.append(np.mean(losses[-20:]) - np.mean(losses[:20]))
        assert np.median(drops) < 0.0

    def test_loss_decomposition_identity(self, blob_dataset):
        model = tiny_model(seed=2)
        config = tiny_config(lambda_hp=0.03)
        opt = Optimizer.for_model(model)
        spec = blob_dataset.sampling_spec(24, perturb=True)
        b = train_step(model, blob_dataset, config, opt, 0, spec)
        want = (b.photometric + config.lambda1 * b.tv_density
                + config.lambda2 * b.tv_color + config.lambda_hp * b.highpass)
        assert b.total == want

    def test_threads_bit_identical(self, blob_dataset):
        from blrf.training import CHUNK_RAYS
        batch = CHUNK_RAYS * 2 + 16  # forces multiple chunks
        outs = []
        for threads in (1, 3):
            model = tiny_model(seed=6)
            rng = np.random.default_rng([9, 0])
            origins, dirs, times, gt = sample_ray_batch(blob_dataset, rng, batch)
            spec = blob_dataset.sampling_spec(16)
            breakdown, grads = loss_and_grads(model, origins, dirs, times, gt,
                                              spec, tiny_config(), threads=threads)
            outs.append((breakdown.as_tuple(), [a.copy() for a in grads.arrays()]))
        assert outs[0][0] == outs[1][0]
        for a, b in zip(outs[0][1], outs[1][1]):
            assert np.array_equal(a, b)

    def test_tv_weight_sweep_monotone(self, blob_dataset):
        finals = []
        for lam in (0.0, 0.1, 1.0):
            model = tiny_model(seed=3)
            config = tiny_config(iters=150, lambda1=lam, seed=3)
            opt = Optimizer.for_model(model)
            spec = blob_dataset.sampling_spec(24, perturb=True)
            for it in range(150):
                train_step(model, blob_dataset, config, opt, it, spec)
            finals.append(tv_penalty(model.density_field))
        assert finals[0] >= finals[1] >= finals[2]

    def test_highpass_regularization_smooths_basis(self, blob_dataset):
        finals = []
        for lam in (0.0, 0.1):
            model = tiny_model(seed=8)
            config = tiny_config(iters=150, lambda_hp=lam, seed=8, hp_samples=16)
            opt = Optimizer.for_model(model)
            spec = blob_dataset.sampling_spec(24, perturb=True)
            for it in range(150):
                train_step(model, blob_dataset, config, opt, it, spec)
            ts = np.linspace(0, 1, 64)
            finals.append(highpass_penalty(model.density_basis.eval_many(ts))
                          + highpass_penalty(model.color_basis.eval_many(ts)))
        assert finals[1] <= finals[0] + 1e-9

    def test_nonfinite_loss_carries_iteration(self, blob_dataset):
        model = tiny_model(seed=5)
        model.density_field.v_x[0, 0] = np.nan
        config = tiny_config()
        opt = Optimizer.for_model(model)
        spec = blob_dataset.sampling_spec(16, perturb=True)
        with pytest.raises(TrainingError) as err:
            train_step(model, blob_dataset, config, opt, 3, spec)
        assert err.value.iteration == 3


class TestTrainLoop:
    def test_zero_iters_checkpoint_equals_init(self, blob_dataset, tmp_path):
        model = tiny_model(seed=7)
        before = [arr.copy() for _, arr in model.parameters()]
        config = tiny_config(iters=0)
        spec = blob_dataset.sampling_spec(16, perturb=True)
        ckpt = tmp_path / "ckpt.blrf"
        train_loop(model, blob_dataset, config, spec, out_dir=tmp_path,
                   checkpoint_path=ckpt)
        loaded, _ = load_checkpoint(ckpt)
        for (name, arr), prev in zip(loaded.parameters(), before):
            assert np.array_equal(arr, prev), name

    def test_log_has_one_row_per_iteration(self, blob_dataset, tmp_path):
        model = tiny_model(seed=9)
        config = tiny_config(iters=7)
        spec = blob_dataset.sampling_spec(16, perturb=True)
        _, _, rows = train_loop(model, blob_dataset, config, spec,
                                out_dir=tmp_path)
        assert len(rows) == 7
        lines = (tmp_path / "log.csv").read_text().strip().splitlines()
        assert lines[0] == ("iter,photometric,tv_density,tv_color,highpass,"
                            "total,lr_tensor,lr_mlp,seconds")
        assert len(lines) == 8

    def test_resume_splices_bit_identically(self, blob_dataset, tmp_path):
        spec = blob_dataset.sampling_spec(16, perturb=True)

        config_full = tiny_config(iters=6, seed=21)
        model_a = tiny_model(seed=21)
        train_loop(model_a, blob_dataset, config_full, spec,
                   checkpoint_path=tmp_path / "full.blrf")

        config_half = tiny_config(iters=3, seed=21)
        model_b = tiny_model(seed=21)
        _, opt_b, _ = train_loop(model_b, blob_dataset, config_half, spec,
                                 checkpoint_path=tmp_path / "half.blrf")
        model_c, meta = load_checkpoint(tmp_path / "half.blrf")
        config_rest = tiny_config(iters=6, seed=21)
        train_loop(model_c, blob_dataset, config_rest, spec,
                   opt=meta["optimizer"], start_iter=meta["iteration"],
                   checkpoint_path=tmp_path / "spliced.blrf")

        assert (tmp_path / "full.blrf").read_bytes() == \
               (tmp_path / "spliced.blrf").read_bytes()

    def test_fixed_seed_checkpoints_bit_identical(self, blob_dataset, tmp_path):
        spec = blob_dataset.sampling_spec(16, perturb=True)
        for tag in ("a", "b"):
            model = tiny_model(seed=13)
            train_loop(model, blob_dataset, tiny_config(iters=4, seed=13), spec,
                       checkpoint_path=tmp_path / f"{tag}.blrf")
        assert (tmp_path / "a.blrf").read_bytes() == (tmp_path / "b.blrf").read_bytes()


@pytest.fixture
def rng():
    return np.random.default_rng(31)
