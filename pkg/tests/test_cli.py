"""Config resolution, CSV schemas, and command behavior.

The CSV bytes for a fixed seed are pinned verbatim: any change to the
row format, the float rendering, or the trajectory stream shows up here
first.
"""

import pytest

from atomlink.cli import (
    OUTCOMES_HEADER,
    PRESETS,
    SUMMARY_HEADER,
    SWEEP_HEADER,
    RunConfig,
    cmd_run,
    cmd_sweep,
    main,
    parse_config_text,
    render_config,
    resolve_config,
    validate_config,
)

GOLDEN_OUTCOMES = """\
index,success,failure_reason,epsilon,fidelity,n_clicks,total_time_us
0,1,none,-1,1.0,1,0.5216636983147327
1,1,none,1,0.9999999999999998,1,1.841939758643956
2,1,none,1,0.9999999999999996,1,0.2448776087636475
"""

GOLDEN_SUMMARY = """\
n_trajectories,n_success,p_success,ci_low,ci_high,mean_fidelity,fidelity_stderr,n_none,n_two_photons,n_click_in_stage3,n_spontaneous_emission,n_wait_timeout
3,3,1.0,0.4385029682449546,1.0,0.9999999999999997,1.2819751242557095e-16,3,0,0,0,0
"""


def tiny_config(out_dir, **extra):
    base = dict(protocol="one", model_level="effective", gamma=0.0,
                n_trajectories=3, master_seed=2024, out_dir=str(out_dir))
    base.update(extra)
    return RunConfig(**base)


class TestConfigText:
    def test_parses_types_and_comments(self):
        text = """
        # a comment
        protocol = two        # trailing comment
        kappa = 0.001
        atoms_per_cavity = 3
        sweep_grid = 0.01, 0.2
        """
        vals = parse_config_text(text)
        assert vals == {"protocol": "two", "kappa": 0.001,
                        "atoms_per_cavity": 3, "sweep_grid": (0.01, 0.2)}

    @pytest.mark.parametrize("line,match", [
        ("frobnicate = 3", "unknown key"),
        ("kappa 0.05", "key = value"),
        ("kappa = fast", "bad value"),
        ("kappa = 0.1\nkappa = 0.2", "duplicate"),
        ("n_trajectories = 1.5", "bad value"),
    ])
    def test_rejects_malformed_lines(self, line, match):
        with pytest.raises(ValueError, match=match):
            parse_config_text(line)

    def test_render_round_trips(self):
        cfg = RunConfig(protocol="two", atoms_per_cavity=3, kappa=0.001,
                        delta=1000.0, delta_prime=1000.9, omega=30.0, g=0.7,
                        sweep_axis="gamma", sweep_grid=(0.0, 0.1, 0.25),
                        dt_us=0.003, out_dir="elsewhere")
        assert RunConfig(**parse_config_text(render_config(cfg))) == cfg

    def test_round_trip_keeps_optional_fields_absent(self):
        cfg = RunConfig()
        text = render_config(cfg)
        assert "dt_us" not in text and "sweep_axis" not in text
        assert RunConfig(**parse_config_text(text)) == cfg


class TestResolve:
    def test_precedence_preset_config_flags(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("n_trajectories = 7\nmaster_seed = 1\n")
        cfg = resolve_config(preset="fig3-point", config_path=str(path),
                             master_seed=99)
        assert cfg.model_level == "effective"   # preset
        assert cfg.n_trajectories == 7          # config beats preset
        assert cfg.master_seed == 99            # flag beats config
        assert cfg.gamma == 0.0

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="unknown preset"):
            resolve_config(preset="fig9")

    def test_all_presets_validate(self):
        for name, overrides in PRESETS.items():
            cfg = resolve_config(preset=name)
            validate_config(cfg)
            if name.endswith("-desk"):
                full = PRESETS[name[:-5]]
                assert cfg.n_trajectories == max(
                    1, full["n_trajectories"] // 10)


class TestValidate:
    @pytest.mark.parametrize("field,value,match", [
        ("protocol", "three", "protocol"),
        ("model_level", "both", "model_level"),
        ("n_trajectories", 0, "at least 1"),
        ("master_seed", -1, "64 bits"),
        ("master_seed", 2 ** 64, "64 bits"),
        ("jobs", 0, "at least 1"),
        ("dt_us", 0.0, "positive"),
        ("t_wait_over_kappa", 0.0, "positive"),
        ("sweep_axis", "alpha", "together"),
        ("sweep_grid", (0.1, 0.2), "together"),
    ])
    def test_field_rules(self, field, value, match):
        with pytest.raises(ValueError, match=match):
            validate_config(RunConfig(**{field: value}))

    @pytest.mark.parametrize("axis,grid,match", [
        ("radius", (0.1, 0.2), "alpha.*gamma|'alpha' or 'gamma'"),
        ("alpha", (), "empty"),
        ("alpha", (0.2, 0.1), "increasing"),
        ("alpha", (0.1, 0.1), "increasing"),
        ("alpha", (0.0, 0.1), "positive"),
        ("gamma", (-0.1, 0.0), "non-negative"),
    ])
    def test_sweep_rules(self, axis, grid, match):
        with pytest.raises(ValueError, match=match):
            validate_config(RunConfig(sweep_axis=axis, sweep_grid=grid))


class TestRunCommand:
    def test_golden_csv_bytes(self, tmp_path):
        assert cmd_run(tiny_config(tmp_path)) == 0
        assert (tmp_path / "outcomes.csv").read_text() == GOLDEN_OUTCOMES
        assert (tmp_path / "summary.csv").read_text() == GOLDEN_SUMMARY

    def test_output_embeds_reparsable_config(self, tmp_path):
        cfg = tiny_config(tmp_path)
        cmd_run(cfg)
        text = (tmp_path / "config.txt").read_text()
        assert RunConfig(**parse_config_text(text)) == cfg
        regime = (tmp_path / "regime.txt").read_text()
        assert "alpha" in regime and "ratio" in regime

    def test_rejects_sweep_config(self, tmp_path):
        cfg = tiny_config(tmp_path, sweep_axis="alpha", sweep_grid=(0.1,))
        with pytest.raises(ValueError, match="sweep command"):
            cmd_run(cfg)

    def test_headers_are_frozen(self):
        assert OUTCOMES_HEADER == ("index,success,failure_reason,epsilon,"
                                   "fidelity,n_clicks,total_time_us")
        assert SUMMARY_HEADER.startswith(
            "n_trajectories,n_success,p_success,ci_low,ci_high,"
            "mean_fidelity,fidelity_stderr,")
        assert SWEEP_HEADER == ("axis,value,p_analytic,p_numeric,ci_low,"
                                "ci_high,mean_fidelity,n_traj")


class TestSweepCommand:
    def test_single_point_alpha_grid(self, tmp_path):
        cfg = tiny_config(tmp_path, n_trajectories=20,
                          sweep_axis="alpha", sweep_grid=(0.05,))
        assert cmd_sweep(cfg) == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == SWEEP_HEADER
        assert len(lines) == 2
        cells = lines[1].split(",")
        assert cells[0] == "alpha"
        assert cells[1] == "0.05"
        assert cells[2] == "0.919191"   # law at alpha=0.05, 6 significant digits
        assert cells[7] == "20"

    def test_gamma_rows_leave_analytic_blank(self, tmp_path):
        cfg = tiny_config(tmp_path, n_trajectories=5,
                          sweep_axis="gamma", sweep_grid=(0.0, 0.1))
        cmd_sweep(cfg)
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(lines) == 3
        for row in lines[1:]:
            assert row.split(",")[2] == ""

    def test_requires_axis(self, tmp_path):
        with pytest.raises(ValueError, match="sweep needs"):
            cmd_sweep(tiny_config(tmp_path))


class TestMain:
    def test_run_with_config_and_flags(self, tmp_path, capsys):
        path = tmp_path / "tiny.cfg"
        path.write_text("n_trajectories = 4\ngamma = 0.0\n"
                        "model_level = effective\n")
        out = tmp_path / "res"
        rc = main(["run", "--preset", "fig3-point", "--config", str(path),
                   "--seed", "11", "--out", str(out)])
        assert rc == 0
        assert len((out / "outcomes.csv").read_text().splitlines()) == 5
        assert "successes" in capsys.readouterr().out

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("protocol = three\n")
        assert main(["run", "--config", str(path)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_config_file_exits_3(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "ghost.cfg")]) == 3
        assert "i/o error:" in capsys.readouterr().err

    def test_verify_list_prints_check_names(self, capsys):
        assert main(["verify", "--list"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert "analytic-law-agreement" in out
        assert "seed-determinism" in out
        assert len(out) == 7

    def test_presets_lists_every_bundle(self, capsys):
        assert main(["presets"]) == 0
        out = capsys.readouterr().out
        for name in PRESETS:
            assert name in out
