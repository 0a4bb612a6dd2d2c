import json
import math
import warnings

import pytest

from fou_portfolio.cli_harness import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    csv_text,
    main,
    run_experiment,
)
from fou_portfolio.fou_engine import TruncationWarning

TINY = dict(n_paths=400, dt=0.01, omegas=[1], eps_list=[0.1], scaling_paths=200, phi_histories=50,
            phi_history=20.0, optimality_paths=400, optimality_eps=[0.2, 0.1, 0.05])


def tiny(**kw):
    return ExperimentConfig(**{**TINY, **kw})


def write_config(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({**TINY, **kw}))
    return str(p)


# -- configuration ---------------------------------------------------------------


def test_defaults_are_desk_scale():
    c = ExperimentConfig()
    assert (c.n_paths, c.dt, c.omegas, c.eps_list) == (100_000, 2e-3, [1, 2, 3], [1.0, 0.1, 0.01])
    assert (c.a, c.H, c.gamma, c.rho, c.T) == (1.0, 0.6, 0.4, -0.5, 1.0)
    assert c.validate() is c


def test_large_scale_preset():
    c = ExperimentConfig().paper_scale()
    assert (c.n_paths, c.dt, c.history) == (500_000, 1e-3, "paper")


@pytest.mark.parametrize("field,value,needle", [
    ("H", 0.5, "H"),
    ("H", 1.2, "H"),
    ("a", 0.0, "a > 0"),
    ("gamma", 1.0, "gamma"),
    ("rho", 1.0, "rho"),
    ("eps_list", [0.0], "eps"),
    ("eps_list", [], "eps_list"),
    ("dt", 0.3, "multiple of dt"),
    ("model", "heston", "model"),
    ("experiment", "plot", "experiment"),
    ("mode", "antithetic", "mode"),
    ("history", "forever", "history"),
    ("x0", -1.0, "x0"),
    ("n_paths", 1, "n_paths"),
])
def test_validation_names_precondition(field, value, needle):
    with pytest.raises(ConfigError, match=needle):
        ExperimentConfig(**{field: value}).validate()


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict({"n_path": 10})


def test_roundtrip_and_hash():
    c = tiny(seed=9)
    assert ExperimentConfig.from_dict(json.loads(c.to_json())) == c
    assert c.replace(workers=8, out="elsewhere").config_hash == c.config_hash
    assert c.replace(seed=10).config_hash != c.config_hash
    assert len(c.config_hash) == 16


def test_csv_header():
    c = tiny()
    text = csv_text(c, ["a", "b"], [[1, 0.1], [2, math.pi]])
    lines = text.splitlines()
    assert lines[0] == f"# config_hash={c.config_hash}"
    header = json.loads(lines[1][len("# config="):])
    assert "workers" not in header and "out" not in header
    assert ExperimentConfig.from_dict(header) == c
    assert lines[2] == "a,b" and float(lines[4].split(",")[1]) == math.pi


# -- subcommands --------------------------------------------------------------------


def test_main_config_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, H=0.4)
    assert main(["averages", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "H" in capsys.readouterr().err


def test_main_bad_config_file(tmp_path):
    assert main(["averages", "--config", str(tmp_path / "missing.json")]) == 2


def test_every_subcommand_has_a_runner():
    from fou_portfolio.cli_harness import RUNNERS, build_parser

    assert set(RUNNERS) == set(EXPERIMENTS)
    for name in EXPERIMENTS:
        args = build_parser().parse_args([name, "--eps-list", "0.2,0.1", "--paths", "10"])
        assert args.command == name and args.eps_list == [0.2, 0.1]


def test_averages_subcommand(tmp_path, capsys):
    assert main(["averages", "--config", write_config(tmp_path), "--out", str(tmp_path)]) == 0
    text = (tmp_path / "averages.csv").read_text()
    assert "lambda_bar_sq,0.5" in text
    assert "PASS" in capsys.readouterr().out


def test_expand_subcommand_rho_flip(tmp_path):
    res = run_experiment(tiny(experiment="expand", eps_list=[0.1, 0.01]))
    assert res.passed
    vals = {(r[0], r[1]): r[2] for r in res.rows}
    flipped = run_experiment(tiny(experiment="expand", eps_list=[0.1, 0.01], rho=0.5))
    fvals = {(r[0], r[1]): r[2] for r in flipped.rows}
    for eps in (0.1, 0.01):
        assert fvals[(eps, "deterministic_correction")] == -vals[(eps, "deterministic_correction")]
        assert fvals[(eps, "c_0T")] == vals[(eps, "c_0T")]


def test_merton_subcommand(tmp_path):
    for u in ("power", "mixture"):
        res = run_experiment(tiny(experiment="merton", utility=u))
        assert res.passed, res.summary()
        assert len(res.rows) == 9


def test_simulate_fou_subcommand(tmp_path):
    assert main(["simulate-fou", "--config", write_config(tmp_path), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "simulate_fou.csv").exists()


def test_properties_subcommand_reports_lambda_average_failure():
    res = run_experiment(tiny(experiment="properties"))
    by_name = {c.name: c.passed for c in res.checks}
    assert by_name.pop("<lambda^2> = 0.49") is False
    assert all(by_name.values()), res.summary()


def test_table1_constant_model_gaps_zero():
    res = run_experiment(tiny(experiment="table1", model="constant", n_paths=4000, mode="raw", eps_list=[0.5, 0.1]))
    assert res.checks and res.passed, res.summary()


def test_table1_tiny_builtin_model_ordering():
    res = run_experiment(tiny(experiment="table1", n_paths=4000, eps_list=[0.5, 0.1]))
    assert res.passed, res.summary()
    assert {r[2] for r in res.rows} == {"optimal", "pi0", "practical", "gap_pi0", "gap_practical"}


@pytest.fixture(scope="module")
def table1_omega1():
    return run_experiment(ExperimentConfig(n_paths=20000, omegas=[1], eps_list=[0.01]))


def _normalized(res, name):
    return next(r[5] for r in res.rows if r[2] == name)


def test_table1_omega1_value_and_practical_bands(table1_omega1):
    assert 1.42 <= _normalized(table1_omega1, "optimal") <= 1.47
    assert 0.05 <= _normalized(table1_omega1, "gap_practical") <= 0.10


@pytest.mark.xfail(strict=True, reason="the normalized pi0 gap is about 1.9e-4, below the [5e-4, 4e-3] band")
def test_table1_omega1_pi0_gap_band(table1_omega1):
    assert 5e-4 <= _normalized(table1_omega1, "gap_pi0") <= 4e-3


def test_header_reproduces_bit_exactly(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    cfg = write_config(tmp_path, n_paths=300, eps_list=[0.2])
    assert main(["table1", "--config", cfg, "--out", str(out1)]) in (0, 1)
    header_cfg = ExperimentConfig.from_header(out1 / "table1.csv").replace(out=str(out2), workers=3)
    header_path = tmp_path / "from_header.json"
    header_path.write_text(header_cfg.to_json())
    assert main(["table1", "--config", str(header_path)]) in (0, 1)
    assert (out1 / "table1.csv").read_bytes() == (out2 / "table1.csv").read_bytes()


def test_header_missing(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_header(p)


def test_optimality_suite_rejects_constant_model():
    with pytest.raises(ConfigError):
        run_experiment(tiny(experiment="optimality", model="constant"))


def test_optimality_tiny_run_structure():
    res = run_experiment(tiny(experiment="optimality"))
    cases = {r[0] for r in res.rows}
    assert {"control", "i_const", "ii_tanh", "iii_const", "iv_scaled"} <= cases
    control = [c for c in res.checks if c.name.startswith("control")]
    assert control and control[0].passed


def test_scaling_constant_model_zero():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        res = run_experiment(tiny(experiment="scaling", model="constant", scaling_eps=[0.5, 0.1]))
    assert res.passed, res.summary()


@pytest.fixture(scope="module")
def scaling_h075():
    # the kernel tail decays slowly at H = 0.75; an explicit history keeps memory bounded
    cfg = ExperimentConfig(experiment="scaling", H=0.75, scaling_paths=2000, phi_histories=300, dt=1e-2,
                           history=200.0, phi_history=200.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        return run_experiment(cfg)


def _slope(res, name):
    cols, rows = res.extra_tables["slopes"]
    return next(r[1] for r in rows if r[0] == name)


def test_scaling_second_H_l2_slopes(scaling_h075):
    for k in ("eta", "kappa", "I"):
        assert _slope(scaling_h075, k) == pytest.approx(0.25, abs=0.15)


@pytest.mark.xfail(strict=True, reason="pre-asymptotic Var(phi_0) slope, about 0.68 on this ladder")
def test_scaling_second_H_phi_slope(scaling_h075):
    assert _slope(scaling_h075, "var_phi0") == pytest.approx(0.5, abs=0.15)
