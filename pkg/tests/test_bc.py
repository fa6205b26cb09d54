"""Dirichlet boundary correction: impulse probes, the probe-adjust-
reapply-assign sequence, exactness guarantees, and probe caching."""

import numpy as np
import pytest

from pdeblocks import (
    BoundaryValues,
    DegenerateKernelError,
    EquationKind,
    Field1D,
    KernelProbe,
    ParamVector,
    PFNOConfig,
    PFNOModel,
    apply_dirichlet_correction,
    make_grid,
    pfno_forward,
    probe_kernel,
    wrap_with_bc,
)

from conftest import sine_field


def identity_kernel(u):
    return u


def doubling_kernel(u):
    return Field1D(u.grid, 2.0 * u.values)


def mean_projector(u):
    return Field1D(u.grid, np.full(u.grid.nx, u.values.mean()))


class CountingKernel:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, u):
        self.calls += 1
        return self.fn(u)


class TestProbeKernel:
    def test_identity(self, grid32):
        probe = probe_kernel(identity_kernel, grid32)
        assert probe.k00 == 1.0 and probe.kll == 1.0

    def test_scaled_identity(self, grid32):
        probe = probe_kernel(doubling_kernel, grid32)
        assert probe.k00 == 2.0 and probe.kll == 2.0

    def test_mean_projector(self, grid32):
        probe = probe_kernel(mean_projector, grid32)
        assert abs(probe.k00 - 1.0 / 32) < 1e-15
        assert abs(probe.kll - 1.0 / 32) < 1e-15

    def test_degenerate_rejected(self, grid32):
        zero = lambda u: Field1D(u.grid, np.zeros(u.grid.nx))  # noqa: E731
        with pytest.raises(DegenerateKernelError, match="floor"):
            probe_kernel(zero, grid32)

    def test_floor_configurable(self, grid32):
        tiny = lambda u: Field1D(u.grid, 1e-6 * u.values)  # noqa: E731
        probe = probe_kernel(tiny, grid32, floor=1e-7)
        assert abs(probe.k00 - 1e-6) < 1e-18
        with pytest.raises(DegenerateKernelError):
            probe_kernel(tiny, grid32, floor=1e-5)


class TestDirichletCorrection:
    def test_identity_kernel_fixed_point(self, grid32, rng):
        u0 = Field1D(grid32, rng.normal(size=32))
        probe = probe_kernel(identity_kernel, grid32)
        out = apply_dirichlet_correction(
            identity_kernel, u0, u0.values[0], u0.values[-1], probe
        )
        np.testing.assert_array_equal(out.values, u0.values)

    def test_doubling_kernel_hand_trace(self, grid32, rng):
        u0 = Field1D(grid32, rng.normal(size=32))
        probe = probe_kernel(doubling_kernel, grid32)
        out = apply_dirichlet_correction(
            doubling_kernel, u0, u0.values[0], u0.values[-1], probe
        )
        # adjusted boundary: 2 u0 - (2 u0)/2 = u0, so the re-applied kernel
        # doubles every node; the assignment then pins the boundary back
        np.testing.assert_array_equal(out.values[1:-1], 2.0 * u0.values[1:-1])
        assert out.values[0] == u0.values[0]
        assert out.values[-1] == u0.values[-1]

    def test_boundaries_exact_for_nonlinear_kernel(self, grid32, rng):
        kernel = lambda u: Field1D(u.grid, u.values**2 + 0.3)  # noqa: E731
        u0 = Field1D(grid32, rng.normal(size=32))
        probe = probe_kernel(kernel, grid32)
        out = apply_dirichlet_correction(kernel, u0, 1.25, -0.75, probe)
        assert out.values[0] == 1.25
        assert out.values[-1] == -0.75

    def test_no_probe_still_exact(self, grid32, rng):
        u0 = Field1D(grid32, rng.normal(size=32))
        out = apply_dirichlet_correction(identity_kernel, u0, 0.5, 0.25, None)
        assert out.values[0] == 0.5 and out.values[-1] == 0.25
        # interior untouched when the pre-adjustment is skipped
        np.testing.assert_array_equal(out.values[1:-1], u0.values[1:-1])

    def test_nonfinite_alpha_rejected(self, grid32):
        u0 = sine_field(grid32)
        probe = KernelProbe(k00=1.0, kll=1.0)
        with pytest.raises(ValueError, match="finite"):
            apply_dirichlet_correction(identity_kernel, u0, np.nan, 0.0, probe)

    def test_deterministic(self, grid32, rng):
        kernel = lambda u: Field1D(u.grid, np.tanh(u.values) + 0.5)  # noqa: E731
        u0 = Field1D(grid32, rng.normal(size=32))
        probe = probe_kernel(kernel, grid32)
        a = apply_dirichlet_correction(kernel, u0, 0.1, 0.2, probe)
        b = apply_dirichlet_correction(kernel, u0, 0.1, 0.2, probe)
        np.testing.assert_array_equal(a.values, b.values)


class TestWrapWithBC:
    def _bc(self, n_steps, seed=0):
        rng = np.random.default_rng(seed)
        return BoundaryValues(left=rng.normal(size=n_steps + 1),
                              right=rng.normal(size=n_steps + 1))

    def test_untrained_model_boundaries_exact_every_step(self):
        grid = make_grid(32)
        cfg = PFNOConfig(d_h=6, n_layers=2, k_max_modes=5, n_params=1)
        model = PFNOModel.init(cfg, EquationKind.CONVECTION, seed=1)
        gamma = ParamVector(beta=1.0)
        kernel = lambda f: pfno_forward(model, f, gamma)  # noqa: E731
        bc = self._bc(5)
        step = wrap_with_bc(kernel, grid, bc)
        u = sine_field(grid)
        for k in range(1, 6):
            u = step(u, k)
            left, right = bc.at(k)
            assert u.values[0] == left
            assert u.values[-1] == right

    def test_probe_cache_shares_probes(self, grid32):
        kernel = CountingKernel(doubling_kernel)
        bc = self._bc(2)
        cache = {}
        wrap_with_bc(kernel, grid32, bc, cache=cache, cache_key=("a",))
        assert kernel.calls == 2  # one impulse pair
        wrap_with_bc(kernel, grid32, bc, cache=cache, cache_key=("a",))
        assert kernel.calls == 2  # cache hit, no new probes
        wrap_with_bc(kernel, grid32, bc, cache=cache, cache_key=("b",))
        assert kernel.calls == 4  # different kernel identity -> new probes

    def test_without_cache_probes_each_wrap(self, grid32):
        kernel = CountingKernel(doubling_kernel)
        bc = self._bc(2)
        wrap_with_bc(kernel, grid32, bc)
        wrap_with_bc(kernel, grid32, bc)
        assert kernel.calls == 4

    def test_degenerate_kernel_warns_but_enforces(self, grid32, rng):
        zero = lambda u: Field1D(u.grid, np.zeros(u.grid.nx))  # noqa: E731
        bc = self._bc(3, seed=2)
        with pytest.warns(RuntimeWarning, match="degenerate"):
            step = wrap_with_bc(zero, grid32, bc)
        u = Field1D(grid32, rng.normal(size=32))
        out = step(u, 1)
        left, right = bc.at(1)
        assert out.values[0] == left and out.values[-1] == right

    def test_paired_run_interior_stability(self):
        # A miscalibrated one-step operator corrected with the true boundary
        # values: the interior MAE must not grow by more than 10% versus the
        # uncorrected run. The pre-adjustment's linearization assumes the
        # kernel's boundary response is diagonal-dominant (k00 near 1), which
        # holds for near-identity one-step maps like this one.
        from pdeblocks import exact_convection

        grid = make_grid(32)
        u0 = Field1D(grid, np.sin(2 * np.pi * grid.x + 0.7)
                     + 0.3 * np.sin(4 * np.pi * grid.x))
        truth = [exact_convection(u0, 0.3, 0.01 * k) for k in range(6)]
        kernel = lambda f: exact_convection(f, 0.36, 0.01)  # noqa: E731

        bc = BoundaryValues(
            left=np.array([t.values[0] for t in truth]),
            right=np.array([t.values[-1] for t in truth]),
        )
        step = wrap_with_bc(kernel, grid, bc)
        plain = corrected = u0
        plain_err = corrected_err = 0.0
        for k in range(1, 6):
            plain = kernel(plain)
            corrected = step(corrected, k)
            plain_err += float(np.mean(np.abs(plain.values[1:-1] - truth[k].values[1:-1])))
            corrected_err += float(np.mean(np.abs(corrected.values[1:-1] - truth[k].values[1:-1])))
        assert corrected_err <= 1.1 * plain_err
