"""Tests for path runs, ensembles, sweeps, and convergence studies."""
import math

import numpy as np
import pytest

from smcflow.dynamics import FormKind, ModelForm
from smcflow.grid import GridSpec, ScalarField
from smcflow.harness import (
    ModelConfig,
    SweepPlan,
    make_stepper,
    run_ensemble,
    run_path,
    self_convergence_dt,
    self_convergence_resolution,
    sweep_R,
    sweep_epsilon,
    sweep_eta,
    worker_count,
)
from smcflow.noise import NoisePath, path_seed

TWO_PI = 2.0 * math.pi


def smooth_u0(grid):
    x1, x2 = grid.nodes()
    return ScalarField(grid, 0.3 * np.sin(TWO_PI * x1) + 0.2 * np.cos(TWO_PI * x2))


def ito_config(**kw):
    base = dict(
        form=ModelForm(FormKind.ITO_MCF), scheme="em_imex",
        n=16, dt=1e-3, n_steps=20, record_stride=10,
    )
    base.update(kw)
    return ModelConfig(**base)


class TestModelConfig:
    def test_scheme_form_pairing(self):
        with pytest.raises(ValueError, match="unknown scheme"):
            ito_config(scheme="imex")
        with pytest.raises(ValueError, match="cannot integrate form"):
            ito_config(form=ModelForm(FormKind.STRATONOVICH_MCF))
        with pytest.raises(ValueError, match="cannot integrate form"):
            ito_config(scheme="heun_strat")
        ModelConfig(
            form=ModelForm(FormKind.STRATONOVICH_MCF), scheme="heun_strat",
            n=16, dt=1e-3, n_steps=10,
        )

    def test_bounds(self):
        with pytest.raises(ValueError, match="n_steps"):
            ito_config(n_steps=0)
        with pytest.raises(ValueError, match="record_stride"):
            ito_config(record_stride=0)
        with pytest.raises(ValueError, match="dt must be positive"):
            ito_config(dt=0.0)
        with pytest.raises(ValueError, match="martingale sample steps"):
            ito_config(martingale_steps=(0,))
        with pytest.raises(ValueError, match="martingale sample steps"):
            ito_config(martingale_steps=(21,))

    def test_derived_properties(self):
        cfg = ito_config()
        assert cfg.grid == GridSpec(16)
        assert cfg.horizon == pytest.approx(0.02)

    def test_make_stepper_dispatch(self):
        from smcflow.dynamics import EmImexStepper, HeunStratStepper

        assert isinstance(make_stepper(ito_config()), EmImexStepper)
        strat = ModelConfig(
            form=ModelForm(FormKind.STRATONOVICH_MCF), scheme="heun_strat",
            n=16, dt=1e-3, n_steps=10,
        )
        assert isinstance(make_stepper(strat), HeunStratStepper)


class TestRunPath:
    def test_flat_path_bookkeeping(self):
        cfg = ito_config(n_steps=25)
        grid = cfg.grid
        res = run_path(cfg, ScalarField.constant(grid, 0.4), seed=7)
        noise = NoisePath.generate(7, cfg.dt, cfg.n_steps)
        assert res.seed == 7
        assert res.record_steps == [0, 10, 20, 25]
        assert [r.t for r in res.records] == pytest.approx([0.0, 0.01, 0.02, 0.025])
        np.testing.assert_array_equal(res.w_rec, noise.w[[0, 10, 20, 25]])
        assert np.max(np.abs(res.hv_mass)) <= 1e-14
        assert res.steps_done == 25
        assert not res.censored and res.blowup_step is None
        assert res.max_mass_residual <= 1e-14
        assert np.max(np.abs(res.terminal.values - 0.4 - noise.w[25])) <= 1e-12

    def test_noise_path_validation(self):
        cfg = ito_config()
        u0 = ScalarField.constant(cfg.grid, 0.0)
        with pytest.raises(ValueError, match="seed or an explicit noise"):
            run_path(cfg, u0)
        with pytest.raises(ValueError, match="does not match the config dt"):
            run_path(cfg, u0, noise=NoisePath.generate(0, 2e-3, 20))
        with pytest.raises(ValueError, match="shorter than the run"):
            run_path(cfg, u0, noise=NoisePath.generate(0, 1e-3, 10))
        with pytest.raises(ValueError, match="start_step"):
            run_path(cfg, u0, seed=0, start_step=25)

    def test_resume_matches_uninterrupted(self):
        cfg = ito_config(n_steps=10)
        grid = cfg.grid
        noise = NoisePath.generate(31, cfg.dt, cfg.n_steps)
        u0 = smooth_u0(grid)
        full = run_path(cfg, u0, noise=noise)
        first = run_path(cfg, u0, noise=noise, stop_at_step=5)
        assert first.steps_done == 5
        second = run_path(cfg, first.terminal, noise=noise, start_step=5)
        assert second.steps_done == 10
        np.testing.assert_array_equal(second.terminal.values, full.terminal.values)

    def test_checkpoint_callback_cadence(self):
        cfg = ito_config(n_steps=20)
        seen = []
        run_path(
            cfg, ScalarField.constant(cfg.grid, 0.0), seed=3,
            checkpoint_every=6, checkpoint_cb=lambda st: seen.append(st.step),
        )
        assert seen == [6, 12, 18]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_blowup_censors_path(self):
        cfg = ito_config(n_steps=5)
        grid = cfg.grid
        x1, _ = grid.nodes()
        huge = ScalarField(grid, 1e160 * np.sin(TWO_PI * x1))
        res = run_path(cfg, huge, seed=0)
        assert res.censored
        assert res.blowup_step == 1
        assert res.steps_done == 0
        assert len(res.records) == 1    # the initial sample is still taken

    def test_tau_r_stop_at_time_zero(self):
        grid = GridSpec(16)
        x1, _ = grid.nodes()
        steep = ScalarField(grid, 0.5 * np.sin(TWO_PI * x1))  # hess sup ~ 19.7
        cfg = ito_config(
            form=ModelForm(FormKind.REGULARIZED_TRUNCATED, eps=0.1, r_trunc=30.0),
            n_steps=10, stop_at_tau_r=True,
        )
        res = run_path(cfg, steep, seed=1)
        assert res.tau_r_triggered
        assert res.tau_r_time == 0.0
        assert res.steps_done == 0

    def test_tau_r_flag_without_stop(self):
        grid = GridSpec(16)
        x1, _ = grid.nodes()
        steep = ScalarField(grid, 0.5 * np.sin(TWO_PI * x1))
        cfg = ito_config(
            form=ModelForm(FormKind.REGULARIZED_TRUNCATED, eps=0.1, r_trunc=30.0),
            n_steps=10,
        )
        res = run_path(cfg, steep, seed=1)
        assert res.tau_r_triggered and res.tau_r_time == 0.0
        assert res.steps_done == 10

    def test_audits_and_martingale_samples(self):
        cfg = ito_config(n_steps=20, keep_audits=True, martingale_steps=(10, 20))
        res = run_path(cfg, smooth_u0(cfg.grid), seed=5)
        assert len(res.audits) == 20
        assert [s.step for s in res.martingale_samples] == [10, 20]


class TestWorkerCount:
    def test_default_and_parse(self, monkeypatch):
        monkeypatch.delenv("SMCFLOW_WORKERS", raising=False)
        assert worker_count() == 1
        monkeypatch.setenv("SMCFLOW_WORKERS", "4")
        assert worker_count() == 4
        monkeypatch.setenv("SMCFLOW_WORKERS", "0")
        assert worker_count() == 1

    def test_rejects_garbage(self, monkeypatch):
        monkeypatch.setenv("SMCFLOW_WORKERS", "many")
        with pytest.raises(ValueError, match="SMCFLOW_WORKERS"):
            worker_count()


class TestRunEnsemble:
    def test_deterministic_per_path_seeds(self):
        cfg = ito_config(n_steps=10)
        u0 = smooth_u0(cfg.grid)
        a = run_ensemble(cfg, u0, n_paths=4, base_seed=42)
        b = run_ensemble(cfg, u0, n_paths=4, base_seed=42)
        assert a.n_paths == 4 and a.n_censored == 0
        assert [r.seed for r in a.results] == [path_seed(42, i) for i in range(4)]
        for ra, rb in zip(a.results, b.results):
            np.testing.assert_array_equal(ra.terminal.values, rb.terminal.values)

    def test_worker_count_does_not_change_results(self, monkeypatch):
        cfg = ito_config(n_steps=10)
        u0 = smooth_u0(cfg.grid)
        monkeypatch.setenv("SMCFLOW_WORKERS", "1")
        serial = run_ensemble(cfg, u0, n_paths=6, base_seed=9)
        monkeypatch.setenv("SMCFLOW_WORKERS", "3")
        pooled = run_ensemble(cfg, u0, n_paths=6, base_seed=9)
        for ra, rb in zip(serial.results, pooled.results):
            np.testing.assert_array_equal(ra.terminal.values, rb.terminal.values)
            assert ra.records == rb.records

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_censor_accounting(self):
        cfg = ito_config(n_steps=5)
        grid = cfg.grid

        x1, _ = grid.nodes()

        def u0(i):
            if i == 2:
                return ScalarField(grid, 1e160 * np.sin(TWO_PI * x1))
            return ScalarField.constant(grid, 0.1 * i)

        rep = run_ensemble(cfg, u0, n_paths=8, base_seed=0)
        assert rep.n_censored == 1
        assert rep.censor_rate == pytest.approx(1 / 8)
        assert not rep.ok
        assert len(rep.uncensored()) == 7
        mat = rep.records_matrix("mass")
        assert mat.shape == (7, 2)     # records at steps 0 and 5
        assert rep.total_steps == 7 * 5

    def test_martingale_report_wired(self):
        cfg = ito_config(n_steps=20, martingale_steps=(10, 20))
        rep = run_ensemble(cfg, ScalarField.constant(cfg.grid, 0.0), 16, base_seed=911)
        assert rep.martingale is not None
        np.testing.assert_allclose(rep.martingale.times, [0.01, 0.02])
        assert rep.martingale.n_paths == 16
        assert rep.martingale.assembly_gap <= 1e-13

    def test_path_count_validation(self):
        cfg = ito_config()
        with pytest.raises(ValueError, match="n_paths"):
            run_ensemble(cfg, ScalarField.constant(cfg.grid, 0.0), 0, base_seed=0)


class TestSweepPlan:
    def base(self):
        return ito_config(n_steps=10)

    def test_axis_and_shape_validation(self):
        with pytest.raises(ValueError, match="unknown sweep axis"):
            SweepPlan(axis="mu", values=(1.0, 2.0), base_config=self.base(),
                      n_paths=2, base_seed=0)
        with pytest.raises(ValueError, match="at least two values"):
            SweepPlan(axis="eta", values=(1.0,), base_config=self.base(),
                      n_paths=2, base_seed=0)
        with pytest.raises(ValueError, match="strictly monotone"):
            SweepPlan(axis="eta", values=(1.0, 3.0, 2.0), base_config=self.base(),
                      n_paths=2, base_seed=0)
        with pytest.raises(ValueError, match="n_paths"):
            SweepPlan(axis="eta", values=(1.0, 0.5), base_config=self.base(),
                      n_paths=0, base_seed=0)

    def test_dt_axis_needs_dyadic_refinement(self):
        SweepPlan(axis="dt", values=(4e-4, 2e-4, 1e-4), base_config=self.base(),
                  n_paths=2, base_seed=0)
        with pytest.raises(ValueError, match="factors of 2"):
            SweepPlan(axis="dt", values=(1e-3, 3e-4), base_config=self.base(),
                      n_paths=2, base_seed=0)
        with pytest.raises(ValueError, match="factors of 2"):
            SweepPlan(axis="dt", values=(1e-4, 2e-4), base_config=self.base(),
                      n_paths=2, base_seed=0)


class TestSweeps:
    def test_eta_sweep_is_cauchy(self):
        grid = GridSpec(16)
        base = ModelConfig(
            form=ModelForm(FormKind.REGULARIZED, eps=0.1, eta=1e-3, big_k=1),
            scheme="em_imex", n=16, dt=1e-4, n_steps=50, record_stride=50,
        )
        plan = SweepPlan(axis="eta", values=(1e-3, 1e-4, 1e-5, 0.0),
                         base_config=base, n_paths=4, base_seed=777)
        rep = sweep_eta(plan, smooth_u0(grid))
        assert rep.etas == (1e-3, 1e-4, 1e-5, 0.0)
        assert len(rep.reports) == 4
        assert rep.mean_diffs.shape == (3,)
        assert np.all(rep.mean_diffs > 0.0)
        assert rep.cauchy

    def test_eta_sweep_axis_guard(self):
        plan = SweepPlan(axis="epsilon", values=(0.4, 0.2), base_config=ito_config(),
                         n_paths=2, base_seed=0)
        with pytest.raises(ValueError, match="axis must be 'eta'"):
            sweep_eta(plan, ScalarField.constant(GridSpec(16), 0.0))

    def test_epsilon_sweep_report_shape(self):
        grid = GridSpec(16)
        base = ModelConfig(
            form=ModelForm(FormKind.REGULARIZED, eps=0.4, eta=0.0),
            scheme="em_imex", n=16, dt=1e-4, n_steps=50, record_stride=10,
        )
        plan = SweepPlan(axis="epsilon", values=(0.4, 0.2, 0.1),
                         base_config=base, n_paths=4, base_seed=1234)
        rep = sweep_epsilon(plan, smooth_u0(grid))
        assert rep.eps_values == (0.4, 0.2, 0.1)
        assert rep.area_excess.shape == (3,)
        assert np.all(np.isfinite(rep.area_excess))
        assert rep.grad_margin.shape == (3,)
        assert rep.mean_diffs.shape == (2,)
        # energy decays strongly here, so the per-eps bound holds
        assert rep.grad_uniform

    def test_r_sweep_triggers_die_out(self):
        grid = GridSpec(16)
        x1, _ = grid.nodes()
        steep = ScalarField(grid, 0.5 * np.sin(TWO_PI * x1))
        base = ModelConfig(
            form=ModelForm(FormKind.REGULARIZED_TRUNCATED, eps=0.1, r_trunc=20.0),
            scheme="em_imex", n=16, dt=1e-4, n_steps=30, record_stride=30,
        )
        plan = SweepPlan(axis="R", values=(20.0, 60.0, 1e6),
                         base_config=base, n_paths=4, base_seed=55)
        rep = sweep_R(plan, steep)
        assert rep.trigger_fraction[0] == 1.0   # R/2 = 10 below the initial sup
        assert rep.fraction_nonincreasing
        assert rep.final_fraction_zero
        assert rep.untriggered_bit_identical

    def test_r_sweep_must_increase(self):
        base = ModelConfig(
            form=ModelForm(FormKind.REGULARIZED_TRUNCATED, eps=0.1, r_trunc=20.0),
            scheme="em_imex", n=16, dt=1e-4, n_steps=10,
        )
        plan = SweepPlan(axis="R", values=(60.0, 20.0), base_config=base,
                         n_paths=2, base_seed=0)
        with pytest.raises(ValueError, match="must increase"):
            sweep_R(plan, ScalarField.constant(GridSpec(16), 0.0))


class TestConvergenceStudies:
    def test_dt_refinement_gaps_shrink(self):
        cfg = ito_config(n_steps=20, record_stride=20)
        rep = self_convergence_dt(cfg, smooth_u0(cfg.grid), seed=99, n_levels=3)
        assert rep.labels == (1e-3, 5e-4, 2.5e-4, 1.25e-4)
        assert rep.diffs.shape == (3,)
        assert np.all(np.diff(rep.diffs) < 0.0)
        # a single path is noisy; the ensemble-level order lives in the
        # acceptance suite, here we only require a clearly positive trend
        assert rep.observed_order > 0.2

    def test_dt_level_validation(self):
        cfg = ito_config()
        with pytest.raises(ValueError, match="two refinement levels"):
            self_convergence_dt(cfg, ScalarField.constant(cfg.grid, 0.0), 0, n_levels=1)

    def test_resolution_refinement(self):
        cfg = ito_config(n_steps=10, record_stride=10)

        def build(grid):
            return smooth_u0(grid)

        rep = self_convergence_resolution(cfg, build, seed=99, n_values=(16, 32, 64))
        assert rep.labels == (16, 32, 64)
        assert rep.diffs.shape == (2,)
        assert rep.diffs[1] < rep.diffs[0]

    def test_resolution_doubling_validation(self):
        cfg = ito_config()
        with pytest.raises(ValueError, match="must double"):
            self_convergence_resolution(
                cfg, lambda g: ScalarField.constant(g, 0.0), 0, n_values=(16, 48)
            )


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
