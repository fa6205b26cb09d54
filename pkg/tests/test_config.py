"""Config-file parsing, profile layering, and typed object builders."""

import math

import pytest

from pdeblocks import (
    ConfigError,
    EquationKind,
    ParamVector,
    build_config,
    load_config,
    parse_config_text,
)


class TestParseText:
    def test_basic_assignments(self):
        raw = parse_config_text("equation = burgers\ngrid.nx = 256\n")
        assert raw == {"equation": "burgers", "grid.nx": "256"}

    def test_comments_and_blank_lines(self):
        text = "# full line comment\n\nseed = 3  # trailing comment\n   \n"
        assert parse_config_text(text) == {"seed": "3"}

    def test_last_assignment_wins(self):
        raw = parse_config_text("seed = 1\nseed = 2\n")
        assert raw == {"seed": "2"}

    def test_missing_equals_reports_line(self):
        with pytest.raises(ConfigError, match="<config>:2"):
            parse_config_text("seed = 1\njust some words\n")

    def test_missing_key_rejected(self):
        with pytest.raises(ConfigError, match="missing key"):
            parse_config_text("= 5\n")

    def test_value_may_contain_equals(self):
        assert parse_config_text("out = a=b")["out"] == "a=b"


class TestProfiles:
    def test_paper_defaults(self):
        cfg = build_config("paper")
        assert cfg["grid.nx"] == 1024
        assert cfg["model.d_h"] == 128
        assert cfg["train.epochs"] == 1000
        assert cfg["data.n_per_param"] == 2000
        assert cfg["data.beta_values"] == (0.1, 0.4, 0.7, 1.0, 2.0)
        assert cfg["data.nu_values"] == (0.01, 0.1, 0.2, 0.5, 1.0, 2.0)
        assert cfg["train.lr"] == 1e-3
        assert cfg["solver.sample_dt"] == 0.01

    def test_desk_overrides(self):
        cfg = build_config("desk")
        assert cfg["grid.nx"] == 128
        assert cfg["model.d_h"] == 16
        assert cfg["train.epochs"] == 300
        assert cfg["data.n_per_param"] == 40
        # untouched keys inherit the "paper" profile values
        assert cfg["model.n_layers"] == 4
        assert cfg["solver.n_steps"] == 10

    def test_unknown_profile(self):
        with pytest.raises(ConfigError, match="profile"):
            build_config("gpu")


class TestLayering:
    def test_file_overrides_profile(self):
        cfg = build_config("desk", file_values={"grid.nx": "64"})
        assert cfg["grid.nx"] == 64

    def test_explicit_overrides_file(self):
        cfg = build_config("paper", file_values={"seed": "1"},
                           overrides={"seed": 7})
        assert cfg["seed"] == 7

    def test_unknown_key_in_file(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            build_config("paper", file_values={"grid.ny": "4"})

    def test_unknown_key_in_overrides(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            build_config("paper", overrides={"nope": 1})

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match="grid.nx"):
            build_config("paper", file_values={"grid.nx": "tiny"})

    def test_typed_parsing(self):
        cfg = build_config("paper", file_values={
            "bc": "yes",
            "data.beta_values": "0.5, 1.5",
            "assemble.blocks": "conv, diff",
            "train.lr": "5e-4",
        })
        assert cfg["bc"] is True
        assert cfg["data.beta_values"] == (0.5, 1.5)
        assert cfg["assemble.blocks"] == ("conv", "diff")
        assert cfg["train.lr"] == 5e-4

    def test_bool_parsing_strict(self):
        with pytest.raises(ConfigError, match="bc"):
            build_config("paper", file_values={"bc": "maybe"})

    def test_unknown_lookup(self):
        cfg = build_config("paper")
        with pytest.raises(ConfigError, match="unknown config key"):
            cfg["sweeper.axis"]


class TestBuilders:
    def test_equation_and_grid(self):
        cfg = build_config("desk", overrides={"equation": "burgers"})
        assert cfg.equation() is EquationKind.BURGERS
        grid = cfg.grid()
        assert grid.nx == 128 and grid.length == 1.0

    def test_solver(self):
        cfg = build_config("paper")
        solver = cfg.solver()
        assert solver.sample_dt == 0.01
        assert solver.cfl_safety == 0.4
        assert solver.n_steps == 10
        assert cfg.solver(n_steps=25).n_steps == 25

    def test_ic_spec(self):
        cfg = build_config("paper", overrides={"seed": 4})
        spec = cfg.ic_spec()
        assert spec.n_waves == 2 and spec.n_max == 8
        assert spec.amp_range == (0.0, 1.0)
        assert spec.seed == 4
        assert cfg.ic_spec(seed=11).seed == 11

    def test_param_grid_per_kind(self):
        cfg = build_config("paper", file_values={
            "data.beta_values": "0.5, 1.0",
            "data.nu_values": "0.1, 0.2, 0.3",
        })
        conv = cfg.param_grid(EquationKind.CONVECTION)
        assert conv == (ParamVector(beta=0.5), ParamVector(beta=1.0))
        diff = cfg.param_grid(EquationKind.DIFFUSION)
        assert [p.get("nu") for p in diff] == [0.1, 0.2, 0.3]
        burgers = cfg.param_grid(EquationKind.BURGERS)
        assert [p.get("nu") for p in burgers] == [0.1, 0.2, 0.3]
        assert cfg.param_grid(EquationKind.NONLINEAR_CONVECTION) == (ParamVector(),)
        cross = cfg.param_grid(EquationKind.CONVECTION_DIFFUSION)
        assert len(cross) == 6
        assert cross[0] == ParamVector(beta=0.5, nu=0.1)
        assert cross[-1] == ParamVector(beta=1.0, nu=0.3)

    def test_param_grid_uses_equation_key(self):
        cfg = build_config("paper", overrides={"equation": "diffusion"})
        assert all(p.names() == ("nu",) for p in cfg.param_grid())

    def test_model_config_sets_n_params(self):
        cfg = build_config("desk")
        assert cfg.model_config(EquationKind.CONVECTION).n_params == 1
        assert cfg.model_config(EquationKind.NONLINEAR_CONVECTION).n_params == 0
        assert cfg.model_config(EquationKind.CONVECTION_DIFFUSION).n_params == 2
        mc = cfg.model_config(EquationKind.DIFFUSION)
        assert mc.d_h == 16 and mc.n_layers == 4 and mc.k_max_modes == 16

    def test_train_config(self):
        cfg = build_config("desk", overrides={"seed": 9})
        tc = cfg.train_config()
        assert tc.epochs == 300 and tc.batch_size == 100
        assert tc.lr == 1e-3 and tc.lr_step == 100 and tc.lr_gamma == 0.5
        assert tc.weight_decay == 1e-4 and tc.seed == 9

    def test_finetune_config(self):
        cfg = build_config("desk")
        ft = cfg.finetune_config()
        assert ft.epochs == 100 and ft.batch_size == 4 and ft.lr == 1e-4
        assert ft.lr_step == 100 and ft.lr_gamma == 0.5

    def test_thresholds_default_nan(self):
        cfg = build_config("paper")
        assert math.isnan(cfg["train.threshold"])
        assert math.isnan(cfg["assemble.threshold"])


class TestLoadConfig:
    def test_reads_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# tiny run\nequation = diffusion\ngrid.nx = 64\n",
                        encoding="utf-8")
        cfg = load_config(str(path), profile="desk")
        assert cfg.equation() is EquationKind.DIFFUSION
        assert cfg["grid.nx"] == 64

    def test_no_file_gives_profile(self):
        cfg = load_config(None, profile="desk")
        assert cfg["grid.nx"] == 128

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(str(tmp_path / "absent.cfg"))

    def test_overrides_applied(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 1\n", encoding="utf-8")
        cfg = load_config(str(path), overrides={"seed": 2})
        assert cfg["seed"] == 2
