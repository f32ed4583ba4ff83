"""Tests for config parsing, validation, serialization, and initial fields."""
import math

import numpy as np
import pytest

from smcflow.config import (
    ConfigError,
    RunConfig,
    build_initial,
    config_from_file,
    n_steps_of,
    parse_config,
    parse_initial_spec,
    random_smooth_field,
    resolve_dt,
    serialize_config,
    to_model_config,
    to_model_form,
    RANDOM_SMOOTH_GRAD_BOUND,
)
from smcflow.dynamics import FormKind, default_dt
from smcflow.grid import GridSpec, gradient

TWO_PI = 2.0 * math.pi


class TestParse:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.form == "ito_mcf"
        assert cfg.n == 64
        assert cfg.dt == resolve_dt(64, 0.1)
        assert cfg.scheme == "em_imex"
        assert cfg.T == 0.1
        assert cfg.initial_condition == "flat:0.0"
        assert cfg.output_dir == "out"

    def test_resolved_dt_divides_t_under_stability_proxy(self):
        for n, T in ((8, 0.1), (16, 0.02), (64, 0.1), (64, 1e-5)):
            dt = resolve_dt(n, T)
            assert dt <= default_dt(n) or T < default_dt(n)
            m = round(T / dt)
            assert m >= 1
            assert abs(m * dt - T) <= 1e-12 * T

    def test_comments_and_blanks(self):
        cfg = parse_config(
            """
            # full-line comment
            n = 32          # trailing comment
            T = 0.05

            base_seed = 7
            """
        )
        assert cfg.n == 32 and cfg.T == 0.05 and cfg.base_seed == 7
        assert cfg.dt == resolve_dt(32, 0.05)

    def test_line_errors(self):
        with pytest.raises(ConfigError, match="line 1: expected 'key = value'"):
            parse_config("n 32")
        with pytest.raises(ConfigError, match="line 2: unknown config key 'gamma'"):
            parse_config("n = 32\ngamma = 1")
        with pytest.raises(ConfigError, match="line 3: duplicate config key 'n'"):
            parse_config("n = 32\nT = 0.1\nn = 64")

    def test_typed_value_errors(self):
        with pytest.raises(ConfigError, match="n must be an integer"):
            parse_config("n = 32.5")
        with pytest.raises(ConfigError, match="dt must be a number"):
            parse_config("dt = fast")

    def test_scheme_derivation(self):
        assert parse_config("form = stratonovich_mcf").scheme == "heun_strat"
        assert parse_config("form = regularized").scheme == "em_imex"
        cfg = parse_config("form = stratonovich_mcf\nscheme = heun_strat")
        assert cfg.scheme == "heun_strat"

    def test_explicit_dt_kept(self):
        cfg = parse_config("dt = 0.001\nT = 0.1")
        assert cfg.dt == 1e-3
        assert n_steps_of(cfg) == 100


class TestValidation:
    @pytest.mark.parametrize(
        "text, message",
        [
            ("form = smcf", "form must be one of"),
            ("n = 6", "even integer >= 8"),
            ("n = 33", "even integer >= 8"),
            ("form = stratonovich_mcf\nscheme = em_imex", "cannot integrate form"),
            ("scheme = heun_strat", "cannot integrate form"),
            ("dt = -0.001", "dt must be positive"),
            ("T = 0.0", "T must be positive"),
            ("dt = 0.0003\nT = 0.1", "not an integer multiple"),
            ("eps = 1.5", r"eps must lie in \[0, 1\]"),
            ("eta = -0.2", r"eta must lie in \[0, 1\]"),
            ("bigK = 2", r"2K > 4 \(so bigK >= 3\)"),
            ("R = 0.0", "R must be positive"),
            ("rho = 2.0", r"rho must lie in \(0,2\)"),
            ("theta = -1.0", "theta must be nonnegative"),
            ("n_paths = 0", "n_paths must be at least 1"),
            ("base_seed = -1", "base_seed must be nonnegative"),
            ("record_stride = 0", "record_stride must be at least 1"),
            ("output_dir = ", "output_dir must be nonempty"),
        ],
    )
    def test_rejects(self, text, message):
        with pytest.raises(ConfigError, match=message):
            parse_config(text)

    def test_model_form_errors_surface_as_config_errors(self):
        with pytest.raises(ConfigError, match=r"eps in \(0, 1\]"):
            parse_config("form = regularized\neps = 0.0")

    def test_ic_spec_checked_at_parse_time(self):
        with pytest.raises(ConfigError, match="unknown initial condition kind"):
            parse_config("initial_condition = bump:0.3")


class TestSerialize:
    def test_roundtrip(self):
        cfg = parse_config(
            "form = regularized\nn = 32\ndt = 0.0002\nT = 0.01\neps = 0.25\n"
            "eta = 0.0001\nbigK = 4\nn_paths = 12\nbase_seed = 99\n"
            "initial_condition = modes:[(1,0,0.1,0.0)]\noutput_dir = runs/a"
        )
        again = parse_config(serialize_config(cfg))
        assert again == cfg

    def test_file_roundtrip(self, tmp_path):
        cfg = parse_config("n = 16\nT = 0.01\nbase_seed = 5")
        p = tmp_path / "run.cfg"
        p.write_text(serialize_config(cfg), encoding="utf-8")
        assert config_from_file(p) == cfg


class TestModelMapping:
    def test_form_dispatch(self):
        f = to_model_form(parse_config("form = regularized\neps = 0.3\neta = 0.001\nbigK = 5"))
        assert f.kind is FormKind.REGULARIZED
        assert (f.eps, f.eta, f.big_k) == (0.3, 0.001, 5)
        assert f.r_trunc == float("inf")

        f = to_model_form(parse_config("form = regularized_truncated\nR = 40.0"))
        assert f.kind is FormKind.REGULARIZED_TRUNCATED
        assert f.r_trunc == 40.0

        f = to_model_form(parse_config("form = rho_variant\nrho = 0.5"))
        assert f.rho == 0.5

        f = to_model_form(parse_config("form = ito_mcf\neps = 0.9"))
        assert f.eps == 0.0    # eps only feeds the regularized family

    def test_model_config_passthrough_and_overrides(self):
        cfg = parse_config("n = 16\ndt = 0.001\nT = 0.02\nrecord_stride = 5")
        mc = to_model_config(cfg)
        assert (mc.n, mc.dt, mc.n_steps, mc.record_stride) == (16, 1e-3, 20, 5)
        assert mc.scheme == "em_imex"
        mc2 = to_model_config(cfg, noise_off=True, martingale_steps=(10, 20))
        assert mc2.noise_off and mc2.martingale_steps == (10, 20)


class TestInitialSpecs:
    def test_flat(self):
        assert parse_initial_spec("flat:-0.25") == ("flat", -0.25)
        grid = GridSpec(16)
        u = build_initial("flat:-0.25", grid)
        assert np.all(u.values == -0.25)

    def test_modes_field_values(self):
        grid = GridSpec(32)
        x1, x2 = grid.nodes()
        u = build_initial("modes:[(1, 0, 0.1, 0.0), (2, -1, 0.05, 1.5)]", grid)
        expect = 0.1 * np.cos(TWO_PI * x1) + 0.05 * np.cos(TWO_PI * (2 * x1 - x2) + 1.5)
        np.testing.assert_allclose(u.values, expect, atol=1e-15)

    @pytest.mark.parametrize(
        "spec, message",
        [
            ("flat", "needs 'kind:args'"),
            ("flat:tall", "needs a number"),
            ("modes:[(1,0,0.1", "cannot parse mode list"),
            ("modes:[]", "nonempty"),
            ("modes:[(1, 0, 0.1)]", r"needs \(k1, k2, amp, phase\)"),
            ("modes:[(1.5, 0, 0.1, 0.0)]", "mode numbers must be integers"),
            ("random_smooth:11", "needs 'seed,decay'"),
            ("random_smooth:a,4", "needs 'seed,decay'"),
            ("random_smooth:11,2.0", "decay must be >= 3"),
            ("waves:1", "unknown initial condition kind"),
        ],
    )
    def test_malformed_specs(self, spec, message):
        with pytest.raises(ConfigError, match=message):
            parse_initial_spec(spec)


class TestRandomSmooth:
    def test_reproducible_and_seed_sensitive(self):
        grid = GridSpec(32)
        a = random_smooth_field(grid, 11, 4.0)
        b = random_smooth_field(grid, 11, 4.0)
        c = random_smooth_field(grid, 12, 4.0)
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_gradient_bound(self):
        grid = GridSpec(64)
        for seed in (0, 11, 202):
            u = random_smooth_field(grid, seed, 4.0)
            g = gradient(u)
            sup = float(np.max(np.sqrt(g.x1**2 + g.x2**2)))
            assert 0.05 <= sup <= RANDOM_SMOOTH_GRAD_BOUND

    def test_refinement_samples_same_function(self):
        # node sets nest, and the field is an exact trig evaluation, so the
        # coarse grid values are a bitwise subsample of the fine ones
        coarse = random_smooth_field(GridSpec(32), 7, 4.0)
        fine = random_smooth_field(GridSpec(64), 7, 4.0)
        np.testing.assert_array_equal(fine.values[::2, ::2], coarse.values)

    def test_build_initial_dispatch(self):
        grid = GridSpec(32)
        u = build_initial("random_smooth:7,4.0", grid)
        np.testing.assert_array_equal(u.values, random_smooth_field(grid, 7, 4.0).values)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
