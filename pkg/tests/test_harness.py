import json
import math
import time

import numpy as np
import pytest

from marginal.harness import cli
from marginal.harness.config import ConfigError, ExperimentConfig, load_config, parse_config
from marginal.harness.experiments import (
    EXIT_BUDGET,
    EXIT_CELL_FAILURE,
    EXIT_CONFIG,
    EXIT_OK,
    get_kernel,
    read_csv,
    run_experiment,
    start_samples,
    write_csv,
    zeta_layout,
)
from marginal.harness.stats import (
    NonPositiveError,
    batch_se,
    covariance_of_logs,
    decreasing_within_noise,
    ks_lognormal,
    paired_bootstrap,
    strictly_decreasing,
    strong_disorder_scan,
    summarize,
)
from marginal.disorder import DisorderLaw, EtaParams
from marginal.kernels import ModelKind
from marginal.limits import LimitLaw, limit_sampler

SMOKE = "model = renewal_half\nN_grid = 64, 128\nbeta_hat_grid = 0.5\nsamples = 600\nseed = 7\n"


# ---------------------------------------------------------------- config


def test_parse_config():
    cfg = parse_config(
        "# comment\nmodel = srw2d\nN_grid = 8,16\nbeta_hat_grid = 0.25, 0.5\nlaw = Rademacher\n"
        "zeta_targets = 0.5\npsi = tent\nsamples = 120\ntheta = 0.4\n"
    )
    assert cfg.model is ModelKind.SRW2D and cfg.N_grid == (8, 16)
    assert cfg.beta_hat_grid == (0.25, 0.5) and cfg.law == "rademacher"
    assert cfg.disorder_law is DisorderLaw.RADEMACHER and not cfg.direct_eta
    assert cfg.zeta_targets == (0.5,) and cfg.psi == "tent" and cfg.theta == 0.4
    assert parse_config("law = direct").direct_eta
    echo = cfg.echo()
    assert echo["model"] == ModelKind.SRW2D.value and echo["N_grid"] == [8, 16]
    json.dumps(echo)


@pytest.mark.parametrize(
    "text",
    [
        "N_grid =",
        "nonsense",
        "colour = red",
        "samples = 10",
        "batches = 10",
        "theta = 1.0",
        "law = cauchy",
        "model = levy",
        "zeta_targets = 1.5",
        "psi = square",
        "beta_hat_grid = -1",
        "N_grid = 0",
        "tail_tol = 2",
        "M = 0",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.cfg"))
    p = tmp_path / "a.cfg"
    p.write_text(SMOKE)
    assert load_config(str(p)).N_grid == (64, 128)


# ---------------------------------------------------------------- statistics


def test_ks_examples():
    law = LimitLaw(0.5)
    assert ks_lognormal(limit_sampler(law, 0, 10_000), law) < 0.02
    ones = np.ones(1000)
    # all mass at log 1 = 0 while the normal has mean -sigma^2/2 < 0
    expected = 1 - 0.5 * math.erfc((0.5 * law.sigma_sq) / math.sqrt(2 * law.sigma_sq))
    assert ks_lognormal(ones, law) == pytest.approx(expected, abs=1e-12)
    assert ks_lognormal(ones, law) > 0.4
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = np.exp(rng.normal(rng.normal(), rng.uniform(0.1, 3), size=200))
        assert 0.0 <= ks_lognormal(x, law) <= 1.0


def test_ks_guards():
    law = LimitLaw(0.5)
    x = limit_sampler(law, 1, 500)
    x[:3] = [0.0, -1.0, -2.0]
    with pytest.raises(NonPositiveError) as err:
        ks_lognormal(x, law)
    assert err.value.count == 3
    assert 0 <= ks_lognormal(x, law, allow_nonpositive=True) <= 1
    x[0] = np.nan
    with pytest.raises(ValueError):
        ks_lognormal(x, law, allow_nonpositive=True)
    with pytest.raises(ValueError):
        ks_lognormal(np.ones(50), law)


def test_covariance_of_logs_examples():
    z = limit_sampler(LimitLaw(0.5), 3, 3000)
    C, se, dropped = covariance_of_logs(np.stack([z, z, z], axis=1))
    assert dropped == 0
    assert np.allclose(C, np.log(z).var(ddof=1), rtol=1e-12)
    C0, se0, _ = covariance_of_logs(np.ones((600, 3)))
    assert np.all(C0 == 0.0) and np.all(se0 == 0.0)
    bad = np.stack([z, z], axis=1)
    bad[5, 1] = -1.0
    assert covariance_of_logs(bad)[2] == 1
    with pytest.raises(ValueError):
        covariance_of_logs(z)


def test_batch_se_shrinks():
    # one batch-SE estimate from 30 batches carries ~13% noise, so average the ratio over replicates
    rng = np.random.default_rng(4)
    ratios = []
    for _ in range(20):
        x = rng.normal(size=40_000)
        ratios.append(batch_se(x[:10_000]) / batch_se(x))
    assert np.mean(ratios) == pytest.approx(2.0, rel=0.2)


def test_summarize_zero_beta():
    s = summarize(np.ones(600), "renewal_half", 64, 0.0)
    assert s.mean == 1.0 and s.var == 0.0 and s.var_se == 0.0 and s.mean_se == 0.0
    assert s.log_var == 0.0 and s.ks == 0.0 and s.nonpositive == 0


def test_strong_scan_flags_increase():
    rng = np.random.default_rng(2)
    base = np.exp(rng.normal(size=3000))
    table = {(64, 1.0): base, (64, 1.5): 0.5 * base, (64, 2.0): 4.0 * base}
    rows, violations = strong_disorder_scan(table)
    assert [r[1] for r in rows] == [1.0, 1.5, 2.0]
    assert violations == [(64, 1.5, 2.0)]


def test_trend_helpers():
    assert decreasing_within_noise([3, 2, 1], [0, 0]) == (True, True)
    assert decreasing_within_noise([3, 3.1, 1], [0.1, 0.1]) == (True, False)
    assert decreasing_within_noise([3, 3.5, 1], [0.1, 0.1]) == (False, False)
    with pytest.raises(ValueError):
        decreasing_within_noise([1, 2], [])
    x = np.arange(100.0)
    boot = paired_bootstrap(np.mean, [x, x + 1.0], reps=50, seed=1)
    assert boot.shape == (50, 2) and np.allclose(boot[:, 1] - boot[:, 0], 1.0)
    with pytest.raises(ValueError):
        paired_bootstrap(np.mean, [x, x[:5]])


def test_strictly_decreasing():
    assert strictly_decreasing([3, 2, 1]) and not strictly_decreasing([3, 3, 1])


# ---------------------------------------------------------------- runner


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    rows = [{"a": float(v), "n": i, "flag": bool(i % 2), "name": "x"} for i, v in enumerate(rng.normal(size=50) * 1e-7)]
    rows.append({"a": float("inf"), "n": -3, "flag": False, "name": "y"})
    path = tmp_path / "t.csv"
    write_csv(str(path), rows)
    back = read_csv(str(path))
    for r, b in zip(rows, back):
        assert b == r
        assert float(f"{b['a']:.17g}") == r["a"]


def test_zeta_layout_attained():
    for model, N in [(ModelKind.RENEWAL_HALF, 4096), (ModelKind.SRW2D, 64)]:
        kernel, ov = get_kernel(model, N)
        for z in (0.25, 0.5, 0.75):
            X, Xp, att = zeta_layout(kernel, ov, N, z)
            assert 0.0 < att < 1.0
            if model is ModelKind.RENEWAL_HALF:
                assert abs(att - z) <= ov.r[Xp] / ov.R_at(N) + 1e-12


def test_beta_zero_cell(tmp_path):
    cfg = parse_config("N_grid = 64\nbeta_hat_grid = 0.0\nsamples = 600")
    code, man = run_experiment("single", cfg, str(tmp_path))
    assert code == EXIT_OK
    row = read_csv(str(tmp_path / man["cells"][0]["file"]))[0]
    assert row["mean"] == 1.0 and row["var"] == 0.0 and row["log_var"] == 0.0


def test_smoke_run_determinism_and_timing(tmp_path):
    cfg = parse_config(SMOKE)
    t0 = time.perf_counter()
    code, man = run_experiment("single", cfg, str(tmp_path / "a"))
    elapsed = time.perf_counter() - t0
    assert code == EXIT_OK and elapsed < 10.0
    assert [c["status"] for c in man["cells"]] == ["ok", "ok"]
    code2, _ = run_experiment("single", cfg, str(tmp_path / "b"), threads=3)
    assert code2 == EXIT_OK
    for c in man["cells"]:
        assert (tmp_path / "a" / c["file"]).read_bytes() == (tmp_path / "b" / c["file"]).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["rng_scheme"] and "numpy" in manifest["versions"]
    assert manifest["config"]["N_grid"] == [64, 128]
    assert all(c["runtime_s"] >= 0 for c in manifest["cells"])


@pytest.mark.parametrize("model", [ModelKind.SRW2D, ModelKind.CAUCHY1D])
def test_thread_count_independence_walks(model):
    kernel, ov = get_kernel(model, 12, 0.05)
    p = EtaParams.from_law(DisorderLaw.GAUSSIAN, 0.3)
    starts = [((0, 0), 0), ((2, 0), 0)] if model is ModelKind.SRW2D else [((0,), 0), ((1,), 2)]
    a = start_samples(kernel, 5, DisorderLaw.GAUSSIAN, p, 12, starts, 600, threads=1)
    b = start_samples(kernel, 5, DisorderLaw.GAUSSIAN, p, 12, starts, 600, threads=4)
    assert np.array_equal(a, b)
    tail = start_samples(kernel, 5, DisorderLaw.GAUSSIAN, p, 12, starts, 100, first=500)
    assert np.allclose(tail, a[500:], rtol=1e-14, atol=0)


@pytest.mark.parametrize("kind", ["kernel", "multipoint", "field", "theta", "strong"])
def test_each_kind_runs(tmp_path, kind):
    text = "N_grid = 64\nbeta_hat_grid = 0.5\nsamples = 600\nzeta_targets = 0.5\n"
    if kind == "theta":
        text += "law = direct\n"
    if kind == "strong":
        text = text.replace("0.5\nsamples", "0.5, 1.2\nsamples")
    code, man = run_experiment(kind, parse_config(text), str(tmp_path))
    assert code == EXIT_OK, man
    rows = read_csv(str(tmp_path / man["cells"][0]["file"]))
    assert rows and all(isinstance(v, (int, float, str, bool)) for v in rows[0].values())


def test_she_kind_runs(tmp_path):
    code, man = run_experiment("she", parse_config("eps_grid = 0.25\nbeta_hat_grid = 0.5\nsamples = 60"), str(tmp_path))
    assert code == EXIT_OK
    row = read_csv(str(tmp_path / man["cells"][0]["file"]))[0]
    assert row["N"] == 16 and abs(row["grid_mean"] - 1) <= 4 * row["grid_mean_se"]


def test_exit_codes(tmp_path):
    code, man = run_experiment("strong", parse_config("law = direct"), str(tmp_path))
    assert code == EXIT_CONFIG and "error" in man
    code, man = run_experiment("kernel", parse_config("model = srw2d\nN_grid = 200000"), str(tmp_path))
    assert code == EXIT_BUDGET and man["cells"][0]["status"] == "budget"
    code, man = run_experiment("multipoint", parse_config("N_grid = 64\nbeta_hat_grid = 1.5"), str(tmp_path))
    assert code == EXIT_CELL_FAILURE and "BlowUpError" in man["cells"][0]["error"]


def test_cli(tmp_path, capsys):
    cfg = tmp_path / "smoke.cfg"
    cfg.write_text(SMOKE)
    out = tmp_path / "run"
    assert cli.main(["single", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == EXIT_OK
    assert "wrote 2 cell(s)" in capsys.readouterr().out
    assert json.loads((out / "manifest.json").read_text())["seed"] == 3
    bad = tmp_path / "bad.cfg"
    bad.write_text("samples = 1")
    assert cli.main(["single", "--config", str(bad)]) == EXIT_CONFIG
    assert cli.main(["single", "--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG
    assert cli.main(["single", "--config", str(cfg), "--threads", "0"]) == EXIT_CONFIG
    big = tmp_path / "big.cfg"
    big.write_text("model = srw2d\nN_grid = 200000")
    assert cli.main(["kernel", "--config", str(big), "--out", str(out)]) == EXIT_BUDGET
    assert "budget" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["unknown"])
    assert ExperimentConfig().validate().samples >= 60
