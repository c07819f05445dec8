"""End-to-end checks of the scenario runner: config parsing, CSV/sidecar
output, overrides, exit codes, and determinism."""

import json
import os

import numpy as np
import pytest

from atomlaser import ConfigError
from atomlaser.cli import BUILTIN_SCENARIOS, main, parse_scenario

GAMMA_M_5E4 = 92.62263163409446

TRAP_5E4 = """\
[trap]
M = 2e-26
omega0 = 772.8317927830892
sigma_k = 1e6
Gamma = 5e4
"""

TINY_PULSED = TRAP_5E4 + """\
[scenario]
name = tinyp
mode = pulsed_tcl
tcl_order = 2
rates = true

[grid]
t_max = 2e-4
n_steps = 20
"""

TINY_CW = TRAP_5E4 + """\
[scenario]
name = tiny
mode = cw

[grid]
t_max_gamma = 0.05
n_steps = 40

[cw]
kappa1_gamma = 10
Omega_gamma = 1
N = 0.5
n0_max = 20
n1_max = 10
orders = markov,2
"""


def _read_csv(path):
    return np.genfromtxt(path, delimiter=",", names=True)


def _read_meta(csv_path):
    with open(csv_path + ".meta.json") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def fig2_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig2")
    rc = main(["run", "fig2", "--out", str(out)])
    assert rc == 0
    return out


def test_fig2_csv_contents(fig2_out):
    path = os.path.join(fig2_out, "fig2.csv")
    assert os.path.exists(path)
    data = _read_csv(path)
    assert data.dtype.names == ("t_seconds", "gammaM_t", "n_exact", "n_markov",
                                "n_tcl2", "n_tcl4")
    assert data.shape[0] == 4001
    # the row at gamma_M t = 2 carries the textbook e^-2 level
    assert data["gammaM_t"][2000] == pytest.approx(2.0, rel=1e-12)
    assert data["n_markov"][2000] == pytest.approx(np.exp(-2.0), rel=1e-9)
    assert data["n_exact"][0] == 1.0
    # at this coupling the order-4 resummation shadows the exact curve
    assert np.abs(data["n_tcl4"] - data["n_exact"]).max() < 0.02
    assert np.abs(data["n_tcl2"] - data["n_exact"]).max() < 0.2


def test_fig2_sidecar(fig2_out):
    path = os.path.join(fig2_out, "fig2.csv")
    meta = _read_meta(path)
    data = _read_csv(path)
    assert meta["csv"] == "fig2.csv"
    assert tuple(meta["columns"]) == data.dtype.names
    assert meta["grid"]["n_steps"] == 4000
    assert meta["derived"]["gamma_M"] == pytest.approx(GAMMA_M_5E4, rel=1e-12)
    assert meta["trap"]["Gamma"] == 5e4
    assert meta["pulsed"]["tcl_order"] == 4
    est = meta["refinement"]["estimates"]
    assert set(est) == set(meta["columns"])
    # halving the step moves every occupation column by far less than 1e-3
    for col in ("n_exact", "n_tcl2", "n_tcl4"):
        assert 0.0 <= est[col] < 1e-3


def test_zero_coupling_gives_flat_unity(tmp_path):
    cfg = tmp_path / "flat.cfg"
    cfg.write_text(TINY_PULSED.replace("Gamma = 5e4", "Gamma = 0")
                              .replace("rates = true", "rates = false")
                              .replace("name = tinyp", "name = flat"))
    rc = main(["run", str(cfg), "--out", str(tmp_path)])
    assert rc == 0
    data = _read_csv(tmp_path / "flat.csv")
    np.testing.assert_allclose(data["gammaM_t"], 0.0)
    for col in ("n_exact", "n_markov", "n_tcl2"):
        np.testing.assert_allclose(data[col], 1.0, rtol=1e-12)


def test_pulsed_rate_columns(tmp_path):
    cfg = tmp_path / "tinyp.cfg"
    cfg.write_text(TINY_PULSED)
    rc = main(["run", str(cfg), "--out", str(tmp_path)])
    assert rc == 0
    data = _read_csv(tmp_path / "tinyp.csv")
    assert "gamma_exact" in data.dtype.names
    assert "gamma2" in data.dtype.names
    assert data["gamma_exact"][0] == 0.0
    # early times: the exact rate and the order-2 rate agree to leading order
    tail = slice(10, None)
    assert np.abs(data["gamma_exact"][tail] / data["gamma2"][tail] - 1.0).max() < 0.05


def test_cw_writes_one_file_per_order(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CW)
    rc = main(["run", str(cfg), "--out", str(tmp_path)])
    assert rc == 0
    for label, order in (("markov", "markov"), ("tcl2", 2)):
        path = tmp_path / f"tiny_{label}.csv"
        assert path.exists()
        data = _read_csv(path)
        assert data.dtype.names == ("t_seconds", "mean_n0", "mean_n1",
                                    "prob_sum", "min_p", "clipped_flux")
        np.testing.assert_allclose(data["prob_sum"] + data["clipped_flux"],
                                   1.0, atol=1e-9)
        meta = _read_meta(str(path))
        assert meta["cw"]["order"] == order
        assert meta["cw"]["stepper"] == "cn"


def test_repeat_runs_are_byte_identical(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CW)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(out1)]) == 0
    assert main(["run", str(cfg), "--out", str(out2)]) == 0
    for name in ("tiny_markov.csv", "tiny_markov.csv.meta.json",
                 "tiny_tcl2.csv", "tiny_tcl2.csv.meta.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_jobs_flag_runs_orders_concurrently(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CW)
    rc = main(["run", str(cfg), "--out", str(tmp_path), "--jobs", "2"])
    assert rc == 0
    assert (tmp_path / "tiny_markov.csv").exists()
    assert (tmp_path / "tiny_tcl2.csv").exists()


def test_overrides_tmax_dt_order(tmp_path):
    cfg = tmp_path / "tinyp.cfg"
    cfg.write_text(TINY_PULSED)
    rc = main(["run", str(cfg), "--out", str(tmp_path),
               "--tmax", "1e-4", "--dt", "1e-5", "--order", "6"])
    assert rc == 0
    data = _read_csv(tmp_path / "tinyp.csv")
    assert data.shape[0] == 11
    assert "n_tcl6" in data.dtype.names
    assert "gamma6_cum" in data.dtype.names
    meta = _read_meta(str(tmp_path / "tinyp.csv"))
    assert meta["grid"]["n_steps"] == 10
    assert meta["grid"]["t_max"] == pytest.approx(1e-4)
    assert meta["pulsed"]["tcl_order"] == 6


def test_r_reading_override(tmp_path):
    cfg = tmp_path / "tiny4.cfg"
    cfg.write_text(TINY_CW.replace("orders = markov,2", "orders = 4")
                          .replace("name = tiny", "name = tiny4"))
    rc = main(["run", str(cfg), "--out", str(tmp_path), "--r-reading", "inner"])
    assert rc == 0
    meta = _read_meta(str(tmp_path / "tiny4_tcl4.csv"))
    assert meta["cw"]["r_reading"] == "inner"


def test_order_override_rejected_for_cw(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CW)
    rc = main(["run", str(cfg), "--out", str(tmp_path), "--order", "6"])
    assert rc == 1
    assert "--order" in capsys.readouterr().err


def test_bad_config_exits_one(tmp_path, capsys):
    cfg = tmp_path / "broken.cfg"
    cfg.write_text(TINY_CW.replace("mode = cw\n", ""))
    rc = main(["run", str(cfg), "--out", str(tmp_path)])
    assert rc == 1
    err = capsys.readouterr().err
    assert "config error" in err and "mode" in err


def test_unknown_target_exits_one(tmp_path, capsys):
    rc = main(["run", "fig9", "--out", str(tmp_path)])
    assert rc == 1
    assert "neither a built-in scenario" in capsys.readouterr().err


def test_numerical_failure_exits_two(tmp_path, capsys):
    # coarse implicit steps on a stiff truncated box drive probabilities
    # negative under the markov generator; the runner reports that as 2
    cfg = tmp_path / "boom.cfg"
    cfg.write_text(TRAP_5E4 + """\
[scenario]
name = boom
mode = cw

[grid]
t_max = 0.05
dt = 1e-3

[cw]
kappa1_gamma = 10
Omega_gamma = 15
N = 20.3
n0_max = 150
n1_max = 40
orders = markov
""")
    rc = main(["run", str(cfg), "--out", str(tmp_path)])
    assert rc == 2
    assert "numerical failure" in capsys.readouterr().err


def test_list_builtins(capsys):
    assert main(["list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split()[0] for ln in lines] == ["fig2", "fig3", "fig4", "fig5", "fig7"]
    for ln in lines:
        assert len(ln.split(None, 1)[1]) > 10  # carries a description


def test_list_with_config_dir(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text(TINY_CW)
    bad = tmp_path / "bad.cfg"
    bad.write_text("this is [not\nvalid ini ]]]\n")
    assert main(["list", "--configs", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "tiny" in out
    assert "[parse error" in out
    assert main(["list", "--configs", str(tmp_path / "missing")]) == 0
    assert "cannot read" in capsys.readouterr().out


def test_parse_scenario_validation():
    with pytest.raises(ConfigError, match="mode"):
        parse_scenario(TRAP_5E4 + "[scenario]\nmode = pulsed\n[grid]\nt_max = 1\ndt = 0.1\n")
    with pytest.raises(ConfigError, match="exactly one"):
        parse_scenario(TINY_PULSED + "dt = 1e-5\n")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_scenario(TINY_PULSED.replace("rates = true", "typo = 1"))
    with pytest.raises(ConfigError, match="t_max_gamma"):
        parse_scenario(TINY_CW.replace("Gamma = 5e4", "Gamma = 0"))
    with pytest.raises(ConfigError, match=r"\[cw\]"):
        parse_scenario(TINY_PULSED + "\n[cw]\nN = 1\n")
    scen = parse_scenario(BUILTIN_SCENARIOS["fig7"], "fig7")
    assert scen.mode == "cw"
    assert scen.cw_orders == ("markov", 2, 4)
    assert scen.cw_N == 20.3
    assert scen.n_steps == 800
