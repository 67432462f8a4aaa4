import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gevrey_kdv.cauchy_solver import read_csv
from gevrey_kdv.cli_harness import (
    ConfigError,
    ExperimentConfig,
    main,
    parse_config,
    serialize_config,
)


def write(tmp_path, text, name="c.toml"):
    tmp_path.mkdir(parents=True, exist_ok=True)
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, *args, config=None):
    argv = list(args) + ["--out", str(tmp_path / "out")]
    if config is not None:
        argv += ["--config", write(tmp_path, config)]
    return main(argv)


def body(path):
    return path.read_text().split("\n", 1)[1]


# ---------------------------------------------------------------------------
# configuration


def test_default_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(serialize_config(cfg)) == cfg


@settings(max_examples=40, deadline=None)
@given(
    sigma=st.floats(0.55, 0.95),
    N=st.integers(4, 64).map(lambda n: 2 * n),
    L=st.floats(0.5, 1e3),
    deltas=st.lists(st.floats(0.01, 0.49), min_size=1, max_size=4),
    kind=st.sampled_from(["zero", "gauss", "sech2", "cos2"]),
    auto=st.booleans(),
)
def test_round_trip_property(sigma, N, L, deltas, kind, auto):
    theta = 1.0 + 0.9 * (1.0 / (2.0 * (1.0 - sigma)) - 1.0)
    cfg = ExperimentConfig()
    cfg = replace(cfg, grid=replace(cfg.grid, N=N, L=L),
                  weights=replace(cfg.weights, sigma=sigma, theta=theta, deltas=tuple(deltas), auto=auto),
                  data=replace(cfg.data, kind=kind))
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert serialize_config(again) == text


def test_parse_dotted_and_table_forms_agree():
    a = parse_config('grid.N = 64\nweights.sigma = 0.8\n')
    b = parse_config('[grid]\nN = 64\n[weights]\nsigma = 0.8\n')
    assert a == b
    assert a.grid.N == 64 and a.weights.sigma == 0.8


def test_integer_promoted_to_float():
    assert parse_config("grid.L = 3\n").grid.L == 3.0


@pytest.mark.parametrize("text, fragment", [
    ("grid.N = 64\nweights.sigma = 1.2\n", "line 2: weights.sigma: sigma must lie in (1/2, 1)"),
    ("weights.theta = 2.5\n", "line 1: weights.theta"),
    ("grid.M = 3\n", "line 1: grid.M: unknown key"),
    ("foo.bar = 1\n", "unknown section"),
    ("grid.N = 63\n", "grid.N: must be an even integer"),
    ("grid.N = \"many\"\n", "expected an integer"),
    ("preset = \"burgers\"\n", "unknown preset"),
    ("solve.mode = \"implicit\"\n", "unknown mode"),
    ("weights.deltas = [0.7]\n", "weights.deltas"),
    ("a.b.c = 1\n", "nesting"),
    ("grid.N = \n", "syntax error"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert fragment in str(err.value)


def test_sigma_out_of_range_exits_1(tmp_path, capsys):
    assert run(tmp_path, "simulate", config="weights.sigma = 1.2\n") == 1
    assert "(1/2, 1)" in capsys.readouterr().err


def test_missing_config_file_exits_1(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 1


def test_with_value_coerces():
    cfg = ExperimentConfig().with_value("weights.h", 8)
    assert cfg.weights.h == 8.0
    assert ExperimentConfig().with_value("weights.deltas", 0.1).weights.deltas == (0.1,)


# ---------------------------------------------------------------------------
# simulate


def test_simulate_zero_data(tmp_path):
    cfg = 'data.kind = "zero"\nsolve.T = 0.05\ngrid.N = 64\n'
    assert run(tmp_path, "simulate", config=cfg) == 0
    header, rows = read_csv(tmp_path / "out" / "simulate.csv")
    assert len(rows) == 51
    for r in rows:
        assert all(v == 0.0 for k, v in r.items() if k != "t")
    assert header["config"]["data.kind"] == "zero"


KDV_SOLITON = """preset = "kdv"
grid.L = 40.0
grid.N = 256
data.kind = "soliton"
solve.T = 1.0
solve.dt = 0.001
solve.mode = "nonlinear"
"""


def test_simulate_kdv_soliton(tmp_path):
    assert run(tmp_path, "simulate", config=KDV_SOLITON) == 0
    _, rows = read_csv(tmp_path / "out" / "simulate.csv")
    err = np.array([r["l2_error"] for r in rows])
    assert rows[-1]["t"] == pytest.approx(1.0)
    assert err[0] < 1e-5  # Nyquist mode removed from the data
    assert err.max() <= 1e-4


def test_simulate_deterministic(tmp_path):
    cfg = "grid.N = 64\nsolve.T = 0.1\n"
    assert run(tmp_path / "a", "simulate", config=cfg) == 0
    assert run(tmp_path / "b", "simulate", config=cfg) == 0
    a = (tmp_path / "a" / "out" / "simulate.csv").read_bytes()
    b = (tmp_path / "b" / "out" / "simulate.csv").read_bytes()
    assert a == b


def test_simulate_conjugated_header_constants(tmp_path):
    cfg = "grid.N = 64\nsolve.T = 0.05\nsolve.mode = \"conjugated\"\n"
    assert run(tmp_path, "simulate", "--seed", "7", config=cfg) == 0
    header, rows = read_csv(tmp_path / "out" / "simulate.csv")
    assert set(header["constants"]) >= {"M2", "M1", "k", "h0"}
    assert header["config"]["seed"] == 7
    assert "gevrey@0.45" in rows[0]


def test_simulate_envelope_violation_exits_2(tmp_path, capsys):
    assert run(tmp_path, "simulate", config="solve.dt = 0.5\n") == 2
    assert "numerical failure" in capsys.readouterr().err


def test_simulate_custom_model(tmp_path):
    cfg = ('preset = "custom"\ngrid.N = 64\nsolve.T = 0.05\nmodel.a2 = [0.0, 0.3]\n'
           'model.a1 = [0.5, 0.0]\nmodel.a1_decay = 0.0\nmodel.a1_b = [0.0, 1.0]\nsolve.mode = "nonlinear"\n')
    assert run(tmp_path, "simulate", config=cfg) == 0


# ---------------------------------------------------------------------------
# verify


def test_verify_weights_defaults(tmp_path):
    assert run(tmp_path, "verify", "--suite", "weights") == 0
    _, rows = read_csv(tmp_path / "out" / "verify.csv")
    assert len(rows) == 6
    assert all(r["outcome"] == "pass" for r in rows)


def test_verify_neccond_expected_fail(tmp_path):
    assert run(tmp_path, "verify", "--suite", "neccond") == 0
    _, rows = read_csv(tmp_path / "out" / "verify.csv")
    cond = [r for r in rows if r["name"] == "logarithmic_growth_condition"][0]
    assert cond["outcome"] == "fail" and cond["expected"] == "fail"


def test_verify_neccond_log_holds(tmp_path):
    assert run(tmp_path, "verify", "--suite", "neccond", config="model.s = 1.0\n") == 0
    _, rows = read_csv(tmp_path / "out" / "verify.csv")
    cond = [r for r in rows if r["name"] == "logarithmic_growth_condition"][0]
    assert cond["outcome"] == "pass" and cond["measured"] < 0.05


def test_verify_calculus_resolved_grid(tmp_path):
    cfg = ('preset = "mixed"\ngrid.L = 3.141592653589793\ngrid.N = 128\n'
           'data.kind = "cos2"\ndata.amplitude = 0.1\n')
    assert run(tmp_path, "verify", "--suite", "calculus", config=cfg) == 0
    _, rows = read_csv(tmp_path / "out" / "verify.csv")
    cert = [r for r in rows if r["name"] == "certificate"][0]
    assert cert["measured"] <= 1e-3


def test_verify_failure_exits_2(tmp_path):
    # the default torus does not resolve the certificate (residual about 0.018)
    assert run(tmp_path, "verify", "--suite", "calculus") == 2
    _, rows = read_csv(tmp_path / "out" / "verify.csv")
    assert any(r["outcome"] == "fail" for r in rows)


def test_verify_energy_and_faadibruno(tmp_path):
    assert run(tmp_path, "verify", "--suite", "energy,faadibruno", config="solve.T = 0.2\n") == 0
    _, rows = read_csv(tmp_path / "out" / "verify.csv")
    assert {r["suite"] for r in rows} == {"energy", "faadibruno"}


@pytest.mark.parametrize("suite", ["", " , ", "weights,bogus"])
def test_verify_bad_suite_list_exits_1(tmp_path, suite):
    assert run(tmp_path, "verify", "--suite", suite) == 1


# ---------------------------------------------------------------------------
# sweep, conjugate, neccond


SMALL = "grid.N = 64\ngrid.L = 20.0\nsolve.T = 0.1\n"


def test_sweep_h_neumann_column(tmp_path):
    assert run(tmp_path, "sweep", "--axis", "weights.h", "--values", "4,8,16,32", "--threads", "2",
               config=SMALL) == 0
    _, rows = read_csv(tmp_path / "out" / "sweep.csv")
    assert [r["value"] for r in rows[::3]] == [4, 8, 16, 32]
    rn = [r["neumann_r_norm"] for r in rows[::3]]
    assert min(rn) < 1.0


def test_sweep_delta_monotone(tmp_path):
    assert run(tmp_path, "sweep", "--axis", "weights.deltas", "--values", "0.05,0.1,0.2", config=SMALL) == 0
    _, rows = read_csv(tmp_path / "out" / "sweep.csv")
    ratios = [r["energy_ratio"] for r in rows]
    assert all(np.isfinite(ratios))
    assert ratios[0] >= ratios[1] >= ratios[2]


def test_sweep_threads_match_serial(tmp_path):
    args = ("sweep", "--axis", "weights.h", "--values", "4,8")
    assert run(tmp_path / "a", *args, config=SMALL) == 0
    assert run(tmp_path / "b", *args, "--threads", "2", config=SMALL) == 0
    assert body(tmp_path / "a" / "out" / "sweep.csv") == body(tmp_path / "b" / "out" / "sweep.csv")


def test_sweep_partial_and_total_failure(tmp_path):
    assert run(tmp_path / "a", "sweep", "--axis", "weights.theta", "--values", "1.6,2.2", config=SMALL) == 0
    _, rows = read_csv(tmp_path / "a" / "out" / "sweep.csv")
    assert rows[-1]["status"] == "failed" and "theta" in rows[-1]["error"]
    assert run(tmp_path / "b", "sweep", "--axis", "weights.theta", "--values", "2.2,2.5", config=SMALL) == 2


@pytest.mark.parametrize("axis, values", [("preset", "1"), ("grid.Q", "1"), ("weights.h", "a,b"), ("weights.h", ",")])
def test_sweep_bad_axis_exits_1(tmp_path, axis, values):
    assert run(tmp_path, "sweep", "--axis", axis, "--values", values) == 1


def test_conjugate_dump(tmp_path):
    cfg = 'preset = "mixed"\ngrid.L = 3.141592653589793\ngrid.N = 32\ndata.kind = "cos2"\ndata.amplitude = 0.1\n'
    assert run(tmp_path, "conjugate", config=cfg) == 0
    header, rows = read_csv(tmp_path / "out" / "conjugate.csv")
    assert len(rows) == 32 * 32
    assert {"a2_re", "a2_im", "a1_re", "alow_im", "r0_re"} <= set(rows[0])
    assert np.isfinite(header["certificate"])


def test_neccond_csv(tmp_path):
    assert run(tmp_path, "neccond", config="model.s = 1.0\n") == 0
    header, rows = read_csv(tmp_path / "out" / "neccond.csv")
    assert len(rows) == 16 and header["winner"] == "log"
    S = np.array([r["S"] for r in rows])
    assert np.all(np.diff(S) > 0)


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, 'data.kind = "zero"\ngrid.N = 32\nsolve.T = 0.01\n')
    res = subprocess.run([sys.executable, "-m", "gevrey_kdv", "simulate", "--config", cfg, "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "simulate.csv").exists()
