import json
import math

import numpy as np
import pytest

from kpocat import cli, experiments


def test_configs_load_with_documented_defaults():
    for v in experiments.VARIANTS:
        cfg = experiments.load_config(v)
        assert set(cfg["params"]) <= set(cfg["comments"]) | {"lpf_order"}
        assert cfg["params"]["J"] == 80 and cfg["params"]["kappa_ex"] == 0.2
        assert {"fidelity", "beta_cat_sq", "n_in", "K_I_t"} <= set(cfg["reference"])
    with pytest.raises(ValueError):
        experiments.load_config("e")


def test_variant_params():
    p = experiments.variant_params("d")
    assert (p.B, p.A_p, p.T, p.shortcut, p.L) == (1.0, 2.25, 45.0, "eq12", 4)
    assert p.kpo_cutoffs == (6, 6, 6, 5, 4)
    faithful = experiments.variant_params("a", full_truncation=True)
    assert faithful.L == 6 and faithful.kpo_cutoffs == (6, 6, 6, 5, 4, 3, 2)
    small = experiments.variant_params("a", {"J": 20, "L": 3, "A_p": None})
    assert (small.J, small.L, small.A_p, small.kpo_cutoffs) == (20, 3, 2.45, (6, 6, 6, 5))


def test_fit_inverse_j_exact_model():
    J = np.array([20, 40, 60, 80])
    fit = experiments.fit_inverse_j(J, 1.97 - 0.6 / J)
    assert fit.n0 == pytest.approx(1.97, abs=1e-10)
    assert fit.b == pytest.approx(0.6, abs=1e-10)
    assert np.max(np.abs(fit.residuals)) < 1e-12
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.discrepancy == pytest.approx(0.6 / 80 / 1.97)


def test_fit_inverse_j_degenerate():
    with pytest.raises(ValueError):
        experiments.fit_inverse_j([20, 20, 40], [1.0, 1.0, 1.1])
    with pytest.raises(ValueError):
        experiments.fit_inverse_j([20, 40, 60], [1.0, 1.0, 1.0])


def test_closed_kpo_eq12_is_monotone_and_faithful():
    res = experiments.run_closed_kpo("eq12")
    assert res.final_fidelity >= 0.995
    assert np.all(np.diff(res.n) >= 0)
    assert res.times[-1] == pytest.approx(10.0)


def test_closed_kpo_long_ramp_is_adiabatic():
    res = experiments.run_closed_kpo("none", ramp_time=200.0, dt=2e-3)
    assert res.final_fidelity > 0.999


def test_closed_kpo_checks():
    with pytest.raises(ValueError):
        experiments.run_closed_kpo("eq12", cutoff=20)
    with pytest.raises(ValueError):
        experiments.run_closed_kpo("eq12", dt=0.01)


def test_kpo_hamiltonian_cancellation():
    H = experiments.kpo_hamiltonian(60, 1.0, 2.0)
    from kpocat.fock import coherent_state

    for a in (math.sqrt(2), -math.sqrt(2)):
        assert np.max(np.abs(H @ coherent_state(a, 60).amps)) < 1e-12


def test_loss_estimate_examples():
    est = experiments.estimate_loss(K_hz=10e6, omega_kpo_hz=10e9, kappa_ex_over_K=0.2,
                                    K_I_t=10.0, loss_bound=0.1)
    assert est.Q_ex == pytest.approx(5e3)
    assert est.Q_in == pytest.approx(1e5)
    assert est.photon_loss_prob == pytest.approx(0.1)
    zero = experiments.estimate_loss(kappa_in_over_K=0.0)
    assert zero.photon_loss_prob == 0.0 and zero.Q_in == math.inf
    q = experiments.estimate_loss(Q_in=1e5)
    assert q.photon_loss_prob == pytest.approx(0.1)


def test_loss_estimate_validation():
    with pytest.raises(ValueError):
        experiments.estimate_loss()
    with pytest.raises(ValueError):
        experiments.estimate_loss(K_hz=-1.0, loss_bound=0.1)
    with pytest.raises(ValueError):
        experiments.estimate_loss(kappa_in_over_K=0.1, Q_in=1e5)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run_a")
    res = experiments.run_table1("a", {"J": 20}, out_dir=out, wigner_step=0.25)
    return res, out


def test_table1_outputs(small_run):
    res, out = small_run
    for name in ("params.json", "summary.json", "timings.json", "timeseries.csv", "wigner.csv",
                 "density.csv", "envelope.csv", "moments.csv"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    for key in ("fidelity", "beta_cat_sq", "theta_cat_over_pi", "n_in", "K_I_t"):
        assert key in summary
    assert 0.8 < summary["fidelity"] <= 1.0
    assert summary["reference"]["fidelity"] == 0.962
    assert res.pulse.rho.trace == pytest.approx(1.0)
    assert json.loads((out / "params.json").read_text())["J"] == 20


def test_table1_is_deterministic(small_run, tmp_path):
    _, out = small_run
    experiments.run_table1("a", {"J": 20}, out_dir=tmp_path, wigner_step=0.25)
    assert (tmp_path / "summary.json").read_bytes() == (out / "summary.json").read_bytes()


def test_cli_loss_estimate(capsys):
    assert cli.main(["loss-estimate"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["Q_ex"] == pytest.approx(5e3) and out["Q_in"] == pytest.approx(1e5)


def test_cli_closed_kpo(capsys, tmp_path):
    assert cli.main(["closed-kpo", "eq12", "--out-dir", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["final_fidelity"] >= 0.995 and out["oscillation"] == 0.0
    assert (tmp_path / "closed_kpo_eq12.csv").exists()


def test_cli_full_truncation_reports_memory_and_refuses(capsys):
    assert cli.main(["table1", "a", "--paper-faithful", "--memory-budget", "4G"]) == 2
    err = capsys.readouterr().err
    assert "L=6" in err and "GiB" in err


def test_cli_table1_small(capsys, tmp_path):
    code = cli.main(["table1", "c", "--J", "10", "--T", "20", "--L", "2", "--out-dir", str(tmp_path)])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["variant"] == "c"
    assert json.loads((tmp_path / "params.json").read_text())["shortcut"] == "eq12"


def test_parse_bytes():
    assert cli.parse_bytes("8G") == 8 * 1024**3
    assert cli.parse_bytes("512MiB") == 512 * 1024**2
    assert cli.parse_bytes("1000") == 1000
