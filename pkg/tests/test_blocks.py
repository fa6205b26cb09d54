"""PFNO blocks: construction, composed-model gradients, pretraining
determinism, rollout, the checkpoint library, and the estimator wrapper."""

import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pdeblocks import (
    BlockLibrary,
    DataFormatError,
    Dataset,
    EquationKind,
    Field1D,
    ICSpec,
    ParametricFNO,
    ParamVector,
    PFNOConfig,
    PFNOModel,
    TrainConfig,
    TrainMeta,
    generate_dataset,
    load_block,
    make_grid,
    one_step_pairs,
    pfno_embed,
    pfno_forward,
    pretrain_block,
    rollout,
    save_block,
)
from pdeblocks.errors import DivergenceError
from pdeblocks.nn import mse_loss

from conftest import fd_gradient_check, sine_field

TINY = PFNOConfig(d_h=6, n_layers=2, k_max_modes=5, n_params=1)


def tiny_convection_ds(n_per_param=2, n_steps=3, seed=0):
    return generate_dataset(
        EquationKind.CONVECTION,
        [ParamVector(beta=0.5), ParamVector(beta=1.0)],
        n_per_param, make_grid(16), n_steps, ICSpec(seed=seed),
    )


@pytest.fixture(scope="module")
def tiny_model():
    return PFNOModel.init(TINY, EquationKind.CONVECTION, seed=7)


class TestConfigs:
    @pytest.mark.parametrize("kwargs", [
        dict(d_h=0), dict(n_layers=0), dict(k_max_modes=0),
        dict(n_params=-1), dict(activation="relu"),
    ])
    def test_pfno_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            PFNOConfig(**kwargs)

    def test_train_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)


class TestPFNOModel:
    def test_init_deterministic(self):
        a = PFNOModel.init(TINY, EquationKind.CONVECTION, seed=3)
        b = PFNOModel.init(TINY, EquationKind.CONVECTION, seed=3)
        assert a.checksum() == b.checksum()
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])
        c = PFNOModel.init(TINY, EquationKind.CONVECTION, seed=4)
        assert a.checksum() != c.checksum()

    def test_param_names_cover_architecture(self, tiny_model):
        names = tiny_model.param_names()
        assert names[0] == "lift.w" and names[-1] == "project.b"
        assert f"layer{TINY.n_layers - 1}.ri" in names
        assert len(names) == 4 + 4 * TINY.n_layers

    def test_kind_param_count_must_match(self):
        with pytest.raises(ValueError, match="n_params"):
            PFNOModel.init(TINY, EquationKind.NONLINEAR_CONVECTION, seed=0)

    def test_shape_validation(self, tiny_model):
        params = {k: v.copy() for k, v in tiny_model.params.items()}
        params["lift.w"] = params["lift.w"][:, :1]
        with pytest.raises(ValueError, match="lift.w"):
            PFNOModel(TINY, EquationKind.CONVECTION, params)
        params = {k: v.copy() for k, v in tiny_model.params.items()}
        del params["project.b"]
        with pytest.raises(ValueError, match="names"):
            PFNOModel(TINY, EquationKind.CONVECTION, params)

    def test_checksum_tracks_weights(self, tiny_model):
        before = tiny_model.checksum()
        tiny_model.params["lift.b"][0] += 1.0
        try:
            assert tiny_model.checksum() != before
        finally:
            tiny_model.params["lift.b"][0] -= 1.0
        assert tiny_model.checksum() == before

    def test_forward_shapes_and_gamma_guard(self, tiny_model, rng):
        u = rng.normal(size=(3, 16))
        gamma = np.full((3, 1), 0.5)
        out = tiny_model.forward_batch(u, gamma)
        assert out.shape == (3, 16)
        emb = tiny_model.embed_batch(u, gamma)
        assert emb.shape == (3, TINY.d_h, 16)
        with pytest.raises(ValueError, match="gamma"):
            tiny_model.forward_batch(u, np.zeros((3, 2)))

    def test_cache_does_not_change_output(self, tiny_model, rng):
        u = rng.normal(size=(2, 16))
        gamma = np.full((2, 1), 1.0)
        plain = tiny_model.forward_batch(u, gamma)
        cached = tiny_model.forward_batch(u, gamma, cache={})
        np.testing.assert_array_equal(plain, cached)

    def test_zero_param_equation_inputs(self):
        cfg = PFNOConfig(d_h=4, n_layers=1, k_max_modes=3, n_params=0)
        model = PFNOModel.init(cfg, EquationKind.NONLINEAR_CONVECTION, seed=0)
        out = model.forward_batch(np.ones((2, 16)), np.zeros((2, 0)))
        assert out.shape == (2, 16)

    def test_parameter_channel_changes_output(self, tiny_model, rng):
        u = rng.normal(size=(1, 16))
        a = tiny_model.forward_batch(u, np.array([[0.1]]))
        b = tiny_model.forward_batch(u, np.array([[2.0]]))
        assert np.max(np.abs(a - b)) > 1e-8


class TestComposedGradients:
    def test_full_model_matches_finite_differences(self, tiny_model, rng):
        u = rng.normal(size=(2, 16))
        gamma = rng.uniform(0.1, 2.0, size=(2, 1))
        target = rng.normal(size=(2, 16))

        cache = {}
        pred = tiny_model.forward_batch(u, gamma, cache)
        _, grad = mse_loss(pred, target)
        grads = tiny_model.backward_batch(cache, grad)

        def loss():
            return mse_loss(tiny_model.forward_batch(u, gamma), target)[0]

        for name in ("lift.w", "lift.b", "layer0.rr", "layer0.ri", "layer0.w",
                     "layer1.rr", "layer1.b", "project.w", "project.b"):
            fd_gradient_check(loss, tiny_model.params[name], grads[name], rng,
                              tol=1e-5)

    def test_gradient_shapes_match_parameters(self, tiny_model, rng):
        u = rng.normal(size=(2, 16))
        gamma = np.full((2, 1), 0.3)
        cache = {}
        pred = tiny_model.forward_batch(u, gamma, cache)
        grads = tiny_model.backward_batch(cache, np.ones_like(pred))
        assert set(grads) == set(tiny_model.params)
        for name, g in grads.items():
            assert g.shape == tiny_model.params[name].shape


class TestFieldInterface:
    def test_pfno_forward_round_trip(self, tiny_model):
        grid = make_grid(16)
        u = sine_field(grid)
        out = pfno_forward(tiny_model, u, ParamVector(beta=1.0))
        assert isinstance(out, Field1D)
        assert out.grid == grid

    def test_wrong_parameter_names_rejected(self, tiny_model):
        u = sine_field(make_grid(16))
        with pytest.raises(ValueError, match="expects parameters"):
            pfno_forward(tiny_model, u, ParamVector(nu=1.0))
        with pytest.raises(ValueError, match="expects parameters"):
            pfno_forward(tiny_model, u, ParamVector())

    def test_embed_channels(self, tiny_model):
        u = sine_field(make_grid(16))
        emb = pfno_embed(tiny_model, u, ParamVector(beta=1.0))
        assert emb.values.shape == (TINY.d_h, 16)


class TestRollout:
    def test_shapes_and_initial_state(self, tiny_model):
        u0 = sine_field(make_grid(16))
        traj = rollout(tiny_model, u0, ParamVector(beta=0.5), 4)
        assert traj.values.shape == (5, 16)
        np.testing.assert_array_equal(traj.values[0], u0.values)
        assert traj.dt == 0.01
        assert traj.params == ParamVector(beta=0.5)

    def test_zero_steps(self, tiny_model):
        u0 = sine_field(make_grid(16))
        traj = rollout(tiny_model, u0, ParamVector(beta=0.5), 0)
        assert traj.values.shape == (1, 16)

    def test_chaining_matches_repeated_forward(self, tiny_model):
        u0 = sine_field(make_grid(16))
        gamma = ParamVector(beta=0.5)
        traj = rollout(tiny_model, u0, gamma, 3)
        state = u0
        for k in range(1, 4):
            state = pfno_forward(tiny_model, state, gamma)
            np.testing.assert_array_equal(traj.values[k], state.values)

    def test_divergence_detected(self):
        model = PFNOModel.init(TINY, EquationKind.CONVECTION, seed=0)
        for name in model.params:
            model.params[name] = model.params[name] * 1e160
        u0 = sine_field(make_grid(16))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError, match="step"):
                rollout(model, u0, ParamVector(beta=1.0), 3)


class TestOneStepPairs:
    def test_counts_and_alignment(self):
        ds = tiny_convection_ds(n_per_param=2, n_steps=3)
        u_in, gamma, u_out = one_step_pairs(ds)
        assert u_in.shape == (12, 16) and u_out.shape == (12, 16)
        assert gamma.shape == (12, 1)
        np.testing.assert_array_equal(u_in[0], ds.trajectories[0].values[0])
        np.testing.assert_array_equal(u_out[0], ds.trajectories[0].values[1])
        np.testing.assert_array_equal(u_in[3], ds.trajectories[1].values[0])
        assert list(gamma[:, 0]) == [0.5] * 6 + [1.0] * 6

    def test_zero_param_kind(self):
        ds = generate_dataset(EquationKind.NONLINEAR_CONVECTION, [ParamVector()],
                              2, make_grid(16), 2, ICSpec())
        _, gamma, _ = one_step_pairs(ds)
        assert gamma.shape == (4, 0)

    def test_empty_rejected(self):
        ds = tiny_convection_ds(n_per_param=2, n_steps=0)
        with pytest.raises(ValueError, match="pairs"):
            one_step_pairs(ds)


class TestPretraining:
    def test_two_epoch_run_is_deterministic(self):
        hyper = TrainConfig(epochs=2, batch_size=8, seed=11)

        def run():
            ds = tiny_convection_ds(n_per_param=3, n_steps=2)
            return pretrain_block(ds, TINY, hyper)

        m1, h1 = run()
        m2, h2 = run()
        assert m1.checksum() == m2.checksum()
        assert h1.train == h2.train
        assert h1.test == h2.test
        assert len(h1) == 2

    def test_seed_changes_outcome(self):
        ds = tiny_convection_ds(n_per_param=3, n_steps=2)
        m1, _ = pretrain_block(ds, TINY, TrainConfig(epochs=1, batch_size=8, seed=1))
        m2, _ = pretrain_block(ds, TINY, TrainConfig(epochs=1, batch_size=8, seed=2))
        assert m1.checksum() != m2.checksum()

    def test_losses_finite_and_test_tracked(self):
        ds = tiny_convection_ds(n_per_param=3, n_steps=2)
        _, hist = pretrain_block(ds, TINY, TrainConfig(epochs=2, batch_size=8, seed=0))
        assert all(math.isfinite(v) for v in hist.train)
        assert all(math.isfinite(v) for v in hist.test)

    def test_param_count_mismatch(self):
        ds = tiny_convection_ds()
        bad = PFNOConfig(d_h=4, n_layers=1, k_max_modes=3, n_params=0)
        with pytest.raises(ValueError, match="n_params"):
            pretrain_block(ds, bad, TrainConfig(epochs=1))

    def test_empty_dataset_rejected(self):
        ds = Dataset(kind=EquationKind.CONVECTION, grid=make_grid(16), dt=0.01,
                     trajectories=())
        with pytest.raises(ValueError, match="empty"):
            pretrain_block(ds, TINY, TrainConfig(epochs=1))


class TestBlockLibrary:
    def test_round_trip_bit_exact(self, tmp_path, tiny_model):
        lib = BlockLibrary(tmp_path)
        meta = TrainMeta(epochs=5, final_train_loss=0.25, final_test_loss=0.5,
                         seed=9)
        save_block(lib, "conv", tiny_model, meta)
        loaded, got_meta = lib.load_with_meta("conv")
        assert loaded.kind is EquationKind.CONVECTION
        assert loaded.config == TINY
        assert loaded.checksum() == tiny_model.checksum()
        for name in tiny_model.params:
            assert loaded.params[name].tobytes() == tiny_model.params[name].tobytes()
        assert (got_meta.epochs, got_meta.seed) == (5, 9)
        assert got_meta.final_train_loss == 0.25

    def test_two_saves_byte_identical(self, tmp_path, tiny_model):
        lib = BlockLibrary(tmp_path)
        p1 = lib.save("a", tiny_model)
        p2 = lib.save("b", tiny_model)
        assert p1.read_bytes() == p2.read_bytes()

    def test_overwrite_guard(self, tmp_path, tiny_model):
        lib = BlockLibrary(tmp_path)
        lib.save("conv", tiny_model)
        with pytest.raises(FileExistsError):
            lib.save("conv", tiny_model)
        lib.save("conv", tiny_model, overwrite=True)

    def test_names_listing(self, tmp_path, tiny_model):
        lib = BlockLibrary(tmp_path)
        lib.save("zeta", tiny_model)
        lib.save("alpha", tiny_model)
        assert lib.names() == ["alpha", "zeta"]

    @pytest.mark.parametrize("name", ["", ".hidden", "a/b", "sp ace", "-lead"])
    def test_invalid_names(self, tmp_path, name):
        lib = BlockLibrary(tmp_path)
        with pytest.raises(ValueError, match="name"):
            lib.path(name)

    def test_missing_block(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="no block"):
            BlockLibrary(tmp_path).load("ghost")

    def test_kind_check_on_load(self, tmp_path, tiny_model):
        lib = BlockLibrary(tmp_path)
        lib.save("conv", tiny_model)
        with pytest.raises(DataFormatError, match="expected diffusion"):
            load_block(lib, "conv", expect_kind=EquationKind.DIFFUSION)

    def test_corruption_detected(self, tmp_path, tiny_model):
        lib = BlockLibrary(tmp_path)
        path = lib.save("conv", tiny_model)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0x01
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError):
            lib.load("conv")

    def test_crc_matches_trailer(self, tmp_path, tiny_model):
        lib = BlockLibrary(tmp_path)
        path = lib.save("conv", tiny_model)
        stored = int.from_bytes(path.read_bytes()[-4:], "little")
        assert lib.crc("conv") == stored


class TestEstimator:
    def test_get_params_and_clone(self):
        est = ParametricFNO(d_h=4, n_layers=1, epochs=3, seed=5)
        params = est.get_params()
        assert params["d_h"] == 4 and params["seed"] == 5
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_fit_predict(self):
        ds = tiny_convection_ds(n_per_param=3, n_steps=2)
        est = ParametricFNO(d_h=4, n_layers=1, k_max_modes=3, epochs=2,
                            batch_size=8, seed=0)
        assert est.fit(ds) is est
        assert est.equation_ is EquationKind.CONVECTION
        traj = est.predict(sine_field(make_grid(16)), ParamVector(beta=1.0),
                           n_steps=2)
        assert traj.values.shape == (3, 16)
        emb = est.embed(sine_field(make_grid(16)), ParamVector(beta=1.0))
        assert emb.values.shape == (4, 16)

    def test_unfitted_predict_rejected(self):
        est = ParametricFNO()
        with pytest.raises(NotFittedError):
            est.predict(sine_field(make_grid(16)), ParamVector(beta=1.0))

    def test_fit_requires_dataset(self):
        with pytest.raises(TypeError, match="Dataset"):
            ParametricFNO().fit(np.zeros((3, 16)))
