import csv
import math

import numpy as np
import pytest

from harnack_lab.cli import (ConfigError, ExperimentConfig, VERDICT_HEADER,
                             VERSION_TAG, parse_config, render_config,
                             run_command, validate_for_command)


def cfg_text(**kw):
    base = {
        "d": 1, "r0": 1.0, "t": 2.0, "m": 50, "t0": None,
        "xi": "const:1.0", "eta": "zero",
        "name": "linear_additive", "params": {"a": -1.0, "c": 0.5, "s0": 1.0},
        "theta": 1.0, "p": None, "s_choice": None, "delta_merge": 1e-8,
        "measure": "Q", "n": 500, "seed": 0, "burn_in": 2.0,
        "f": "quad_cap", "cap": 100.0, "out": "out", "verbosity": 0,
    }
    base.update(kw)
    lines = ["[problem]", f"d = {base['d']}", f"r0 = {base['r0']}",
             f"t = {base['t']}", f"m = {base['m']}"]
    if base["t0"] is not None:
        lines.append(f"t0 = {base['t0']}")
    lines += [f"xi = {base['xi']}", f"eta = {base['eta']}",
              "", "[system]", f"name = {base['name']}"]
    for k, v in base["params"].items():
        lines.append(f"{k} = {v}")
    lines += ["", "[coupling]", f"theta = {base['theta']}"]
    if base["p"] is not None:
        lines.append(f"p = {base['p']}")
    if base["s_choice"] is not None:
        lines.append(f"s_choice = {base['s_choice']}")
    lines += [f"delta_merge = {base['delta_merge']}",
              f"measure = {base['measure']}",
              "", "[mc]", f"n = {base['n']}", f"seed = {base['seed']}",
              f"burn_in = {base['burn_in']}",
              "", "[functions]", f"f = {base['f']}", f"cap = {base['cap']}",
              "", "[output]", f"dir = {base['out']}",
              f"verbosity = {base['verbosity']}"]
    return "\n".join(lines) + "\n"


def launch(tmp_path, command, text, *extra):
    cfg = tmp_path / "exp.ini"
    cfg.write_text(text)
    return run_command([command, "--config", str(cfg), *extra])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ------------------------------------------------------------ config parsing

def test_round_trip_default_config():
    assert parse_config(render_config(ExperimentConfig())) == ExperimentConfig()


def test_round_trip_loaded_config():
    cfg = ExperimentConfig(
        d=1, r0=0.5, T=1.5, m=200, t0=0.5, xi="zero", eta="const:0.25",
        system_name="sine_multiplicative",
        system_params={"a": -1.0, "c": 0.2, "s0": 0.1},
        theta=0.75, p=16.0, s_choice=0.25, delta_merge=1e-10, measure="P",
        n=5000, seed=42, k_tol=2.5, k_viol=7.0, burn_in=3.0,
        f_name="exp_cap", cap=10.0, out_dir="results", verbosity=2)
    assert parse_config(render_config(cfg)) == cfg


def test_empty_text_gives_defaults():
    assert parse_config("") == ExperimentConfig()


def test_inline_comments_stripped():
    cfg = parse_config("[mc]\nn = 123  # a modest sample\nseed = 9\n")
    assert cfg.n == 123 and cfg.seed == 9


def test_unparseable_text():
    with pytest.raises(ConfigError, match="unparseable"):
        parse_config("n = 1\n")


def test_all_violations_collected():
    text = "\n".join([
        "[problem]", "t = 2.0003", "xi = wobble",
        "[system]", "name = sine_multiplicative", "a = -1.0", "q = 2.0",
        "[coupling]", "theta = 2.5", "measure = R",
        "[mc]", "chains = 4",
        "[extra]", "x = 1",
    ])
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    msgs = exc.value.violations
    assert len(msgs) >= 7
    joined = "\n".join(msgs)
    assert "unknown section [extra]" in joined
    assert "unknown key 'chains'" in joined
    assert "not a positive multiple" in joined
    assert "xi=" in joined
    assert "missing parameters" in joined
    assert "unknown parameters ['q']" in joined
    assert "theta" in joined
    assert "measure" in joined


def test_unparseable_values_reported_per_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("[mc]\nn = lots\nseed = -3\n")
    joined = "\n".join(exc.value.violations)
    assert "cannot parse 'lots'" in joined
    assert "seed" in joined


def test_t0_grid_checks():
    with pytest.raises(ConfigError, match="not on the grid"):
        parse_config("[problem]\nm = 100\nt0 = 0.505\n")
    with pytest.raises(ConfigError, match="t0 <= t - r0"):
        parse_config("[problem]\nm = 100\nt0 = 1.5\n")
    with pytest.raises(ConfigError, match="t0 must be positive"):
        parse_config("[problem]\nm = 100\nt0 = -0.5\n")


def test_validate_for_command_gates():
    cfg = parse_config("")
    with pytest.raises(ConfigError, match="t0"):
        validate_for_command(cfg, "couple")
    with pytest.raises(ConfigError, match="t0"):
        validate_for_command(cfg, "entropy")
    with pytest.raises(ConfigError, match="p"):
        validate_for_command(cfg, "power-harnack")
    short = parse_config("[problem]\nt = 1.0\n")
    with pytest.raises(ConfigError, match="delay window"):
        validate_for_command(short, "log-harnack")
    pinned = parse_config("[coupling]\ns_choice = 1.5\n")
    with pytest.raises(ConfigError, match="s_choice"):
        validate_for_command(pinned, "log-harnack")
    validate_for_command(cfg, "log-harnack")  # fine as-is
    validate_for_command(cfg, "simulate")


# ------------------------------------------------------------ CLI plumbing

def test_help_exits_zero_and_bad_args_exit_one(capsys):
    assert run_command(["--help"]) == 0
    assert run_command(["frobnicate", "--config", "x"]) == 1
    assert run_command([]) == 1
    capsys.readouterr()


def test_missing_config_file(tmp_path, capsys):
    rc = run_command(["bounds", "--config", str(tmp_path / "nope.ini")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_config_error_goes_to_stderr(tmp_path, capsys):
    rc = launch(tmp_path, "bounds", "[coupling]\ntheta = 9\n")
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("config error:")
    assert "theta" in err


# ------------------------------------------------------------ commands

def test_bounds_csv_schema(tmp_path):
    out = tmp_path / "res"
    text = cfg_text(name="sine_multiplicative",
                    params={"a": -1.0, "c": 0.2, "s0": 0.1},
                    t0=1.0, p=16.0, out=out)
    assert launch(tmp_path, "bounds", text) == 0
    header, rows = read_csv(out / "bounds.csv")
    assert header[:4] == ["claim", "value", "s_star", "eps_star"]
    claims = [r[0] for r in rows]
    assert claims == ["log_harnack_H_T", "entropy_deadline_bound",
                      "entropy_full_bound", "power_harnack_Phi_p"]
    for r in rows:
        assert float(r[1]) > 0
        assert r[-1] == VERSION_TAG


def test_bounds_accepts_constants_pseudo_system(tmp_path):
    out = tmp_path / "res"
    text = cfg_text(name="constants",
                    params={"k1": 1.0, "k2": 0.0, "k3": 1.0, "k4": 1.0},
                    out=out)
    assert launch(tmp_path, "bounds", text) == 0
    _, rows = read_csv(out / "bounds.csv")
    assert float(rows[0][1]) == pytest.approx(4.6639534, abs=1e-5)


def test_simulate_rejects_constants_pseudo_system(tmp_path, capsys):
    text = cfg_text(name="constants",
                    params={"k1": 1.0, "k2": 0.0, "k3": 1.0, "k4": 1.0},
                    out=tmp_path / "res")
    assert launch(tmp_path, "simulate", text) == 1
    assert "pseudo-system" in capsys.readouterr().err


def test_simulate_writes_path(tmp_path):
    out = tmp_path / "res"
    assert launch(tmp_path, "simulate", cfg_text(out=out)) == 0
    header, rows = read_csv(out / "simulate.csv")
    assert header == ["step", "t", "x0", "seed", "n", "h", "version"]
    assert len(rows) == 101  # n_T + 1 = T/h + 1 = 2/0.02 + 1
    assert float(rows[0][2]) == 1.0  # starts from xi(0)
    assert rows[-1][1] == "2.0"


def test_simulate_reads_segment_file(tmp_path):
    seg = tmp_path / "xi.txt"
    np.savetxt(seg, np.full(51, 3.0))
    out = tmp_path / "res"
    text = cfg_text(xi=f"file:{seg}", out=out)
    assert launch(tmp_path, "simulate", text) == 0
    _, rows = read_csv(out / "simulate.csv")
    assert float(rows[0][2]) == 3.0


def test_segment_file_shape_enforced(tmp_path, capsys):
    seg = tmp_path / "xi.txt"
    np.savetxt(seg, np.full(7, 3.0))
    text = cfg_text(xi=f"file:{seg}", out=tmp_path / "res")
    assert launch(tmp_path, "simulate", text) == 1
    assert "segment file" in capsys.readouterr().err


def test_couple_single_path_dump(tmp_path):
    out = tmp_path / "res"
    text = cfg_text(t0=1.0, n=1, out=out)
    assert launch(tmp_path, "couple", text) == 0
    header, rows = read_csv(out / "couple.csv")
    assert header == ["step", "t", "x0", "y0", "gap", "gamma", "phi_sq",
                      "log_weight", "seed", "n", "h", "version"]
    by_t = {float(r[1]): r for r in rows}
    assert by_t[0.0][5] != ""          # gamma defined before the deadline
    assert by_t[1.0][5] == ""          # and absent from the deadline on
    assert float(by_t[1.0][4]) == 0.0  # merged exactly at t0
    assert float(by_t[2.0][4]) == 0.0
    assert rows[-1][6] == ""           # no phi increment past the last step
    assert rows[0][-1] == VERSION_TAG


def test_couple_verdict_q_measure(tmp_path):
    out = tmp_path / "res"
    text = cfg_text(t0=1.0, n=400, out=out)
    assert launch(tmp_path, "couple", text) == 0
    header, rows = read_csv(out / "couple.csv")
    assert header == VERDICT_HEADER
    claims = {r[0]: r for r in rows}
    assert claims["coupling_unmerged_fraction"][7] == "holds"
    assert float(claims["coupling_unmerged_fraction"][1]) == 0.0
    assert claims["entropy_half_phi_sq"][7] == "info"
    assert float(claims["entropy_half_phi_sq"][1]) > 0


def test_couple_verdict_p_measure(tmp_path):
    out = tmp_path / "res"
    text = cfg_text(t0=1.0, n=2000, measure="P", out=out)
    assert launch(tmp_path, "couple", text) == 0
    _, rows = read_csv(out / "couple.csv")
    claims = {r[0]: r for r in rows}
    w = claims["girsanov_weight_mean"]
    assert w[7] == "holds"
    assert abs(float(w[1]) - 1.0) < 4 * float(w[2])


def test_couple_exit_2_when_merge_fails(tmp_path):
    out = tmp_path / "res"
    text = cfg_text(t0=1.0, n=100, delta_merge=-1.0, out=out)
    assert launch(tmp_path, "couple", text) == 2
    _, rows = read_csv(out / "couple.csv")
    claims = {r[0]: r for r in rows}
    assert claims["coupling_unmerged_fraction"][7] == "violated"
    assert float(claims["coupling_unmerged_fraction"][1]) == 1.0


def test_entropy_holds_and_exit_codes(tmp_path):
    out = tmp_path / "res"
    text = cfg_text(t0=1.0, n=400, out=out)
    assert launch(tmp_path, "entropy", text) == 0
    header, rows = read_csv(out / "entropy.csv")
    assert header == VERDICT_HEADER
    assert rows[0][0] == "entropy_vs_bound"
    assert rows[0][7] == "holds"
    assert float(rows[0][1]) <= float(rows[0][5])


def test_entropy_exit_3_when_failures_dominate(tmp_path):
    text = cfg_text(t0=1.0, n=100, delta_merge=-1.0, out=tmp_path / "res")
    assert launch(tmp_path, "entropy", text) == 3


def test_log_harnack_holds(tmp_path):
    out = tmp_path / "res"
    assert launch(tmp_path, "log-harnack", cfg_text(n=800, out=out)) == 0
    header, rows = read_csv(out / "log_harnack.csv")
    assert header == VERDICT_HEADER
    assert rows[0][0] == "log_harnack"
    assert rows[0][7] == "holds"
    assert int(rows[0][8]) == 800
    assert float(rows[0][10]) == 0.02


def test_log_harnack_at_delay_boundary_exits_1(tmp_path, capsys):
    text = cfg_text(t=1.0, out=tmp_path / "res")
    assert launch(tmp_path, "log-harnack", text) == 1
    assert "delay window" in capsys.readouterr().err


def test_power_harnack_holds(tmp_path):
    out = tmp_path / "res"
    text = cfg_text(name="sine_multiplicative",
                    params={"a": -1.0, "c": 0.2, "s0": 0.1},
                    p=16.0, n=800, out=out)
    assert launch(tmp_path, "power-harnack", text) == 0
    _, rows = read_csv(out / "power_harnack.csv")
    assert rows[0][0] == "power_harnack"
    assert rows[0][7] == "holds"


def test_power_harnack_below_threshold_exits_1(tmp_path, capsys):
    text = cfg_text(name="sine_multiplicative",
                    params={"a": -1.0, "c": 0.2, "s0": 0.1},
                    p=9.0, n=100, out=tmp_path / "res")
    assert launch(tmp_path, "power-harnack", text) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "9" in err


def test_stationary_runs_on_markov_system(tmp_path):
    out = tmp_path / "res"
    text = cfg_text(name="ou_nodelay", params={"a": 1.0, "s0": 1.0},
                    n=400, burn_in=4.0, out=out)
    assert launch(tmp_path, "stationary", text) == 0
    header, rows = read_csv(out / "stationary.csv")
    assert header[:4] == ["component", "endpoint_mean", "endpoint_var",
                          "lag_r0_autocov"]
    assert len(rows) == 1
    assert float(rows[0][2]) == pytest.approx(0.5, rel=0.35)


def test_stationary_rejects_delay_system(tmp_path, capsys):
    text = cfg_text(n=100, out=tmp_path / "res")
    assert launch(tmp_path, "stationary", text) == 1
    assert "delay" in capsys.readouterr().err


def test_audit_passes_catalog_system(tmp_path):
    out = tmp_path / "res"
    text = cfg_text(name="sine_multiplicative",
                    params={"a": -1.0, "c": 0.2, "s0": 0.1},
                    n=600, out=out)
    assert launch(tmp_path, "audit", text) == 0
    header, rows = read_csv(out / "audit.csv")
    assert header[0] == "condition"
    assert [r[0] for r in rows] == ["A1", "A2", "A3", "A4"]
    assert all(r[3] == "true" for r in rows)


# ------------------------------------------------------------ overrides

def test_seed_paths_out_overrides(tmp_path):
    out2 = tmp_path / "elsewhere"
    text = cfg_text(t0=1.0, n=400, out=tmp_path / "res")
    cfg = tmp_path / "exp.ini"
    cfg.write_text(text)
    rc = run_command(["couple", "--config", str(cfg), "--seed", "123",
                      "--paths", "1", "--out", str(out2)])
    assert rc == 0
    header, rows = read_csv(out2 / "couple.csv")
    assert "gamma" in header          # --paths 1 switched to the dump format
    assert rows[0][8] == "123"        # seed column reflects the override


def test_reruns_are_byte_identical_across_threads(tmp_path):
    cfg = tmp_path / "exp.ini"
    cfg.write_text(cfg_text(n=2000, out=tmp_path / "a"))
    assert run_command(["log-harnack", "--config", str(cfg),
                        "--threads", "1"]) == 0
    one = (tmp_path / "a" / "log_harnack.csv").read_bytes()
    cfg.write_text(cfg_text(n=2000, out=tmp_path / "b"))
    assert run_command(["log-harnack", "--config", str(cfg),
                        "--threads", "8"]) == 0
    eight = (tmp_path / "b" / "log_harnack.csv").read_bytes()
    assert one == eight
