import math

import numpy as np
import pytest

from voxelfit.estimators import Method
from voxelfit.exceptions import VoxelFitError
from voxelfit.simulate import (
    SWEEP_COLUMNS,
    SimConfig,
    calibrate_intercept,
    expected_empty_fraction,
    gen_counts,
    gen_covariates,
    log2_slope,
    run_sweep,
    summarize,
)
from voxelfit.subsample import SubsampleSpec


def test_covariates_shape_and_intercept():
    C = gen_covariates(100, 2, 5)
    assert C.shape == (100, 3)
    assert np.all(C[:, 0] == 1.0)
    np.testing.assert_array_equal(C, gen_covariates(100, 2, 5))


def test_covariate_moments_clt():
    J = 2**16
    Z = gen_covariates(J, 2, 1)[:, 1:]
    assert np.all(np.abs(Z.mean(axis=0)) <= 4 / math.sqrt(J))
    assert np.all(np.abs(Z.var(axis=0) - 1) <= 4 * math.sqrt(2 / J))


@pytest.mark.parametrize("target, expected", [
    (0.5, math.log(math.log(2))),
    (0.99, math.log(-math.log(0.99))),
])
def test_calibrate_closed_form(target, expected):
    C = np.column_stack([np.ones(50), np.zeros((50, 2))])
    b1 = calibrate_intercept(C, (1.0, 1.0), target)
    assert b1 == pytest.approx(expected, abs=1e-10)


def test_calibrate_closed_form_values():
    C = np.column_stack([np.ones(3), np.zeros((3, 2))])
    assert calibrate_intercept(C, (1, 1), 0.5) == pytest.approx(-0.366513, abs=1e-6)
    # log(-log 0.99) = -4.6001492..., i.e. -4.60015 to six figures
    assert calibrate_intercept(C, (1, 1), 0.99) == pytest.approx(-4.600149227, abs=1e-9)


def test_calibrate_residual_and_mc_check():
    J = 2**16
    C = gen_covariates(J, 2, 3)
    b1 = calibrate_intercept(C, (1.0, 1.0), 0.9)
    assert abs(expected_empty_fraction(b1, C, (1.0, 1.0)) - 0.9) <= 1e-10
    N = gen_counts(C, [b1, 1.0, 1.0], 4)
    assert abs(np.mean(N == 0) - 0.9) <= 4 * math.sqrt(0.9 * 0.1 / J)


@pytest.mark.parametrize("target", [0.5, 0.9, 0.99, 0.999])
def test_calibrate_extreme_targets(target):
    C = gen_covariates(4096, 2, 0)
    b1 = calibrate_intercept(C, (1.0, 1.0), target)
    assert -40 < b1 < 10
    assert abs(expected_empty_fraction(b1, C, (1.0, 1.0)) - target) <= 1e-10


def test_counts_unit_mean():
    J = 100_000
    C = np.ones((J, 1))
    N = gen_counts(C, [0.0], 2)
    assert 0.987 <= N.mean() <= 1.013
    assert abs(np.mean(N == 0) - math.exp(-1)) <= 4 * math.sqrt(math.exp(-1) * (1 - math.exp(-1)) / J)


def test_counts_tiny_mean_all_zero():
    N = gen_counts(np.ones((1000, 1)), [-800.0], 0)
    assert N.sum() == 0


def test_counts_overflow_names_cell():
    C = np.column_stack([np.ones(4), [0.0, 0.0, 40.0, 0.0]])
    with pytest.raises(VoxelFitError, match="cell 2"):
        gen_counts(C, [0.0, 1.0], 0)


def test_summarize_identity():
    rng = np.random.default_rng(0)
    est = rng.normal(1.0, 0.3, size=(200, 3))
    bias, sd, rmse = summarize(est, np.array([0.9, 1.0, 1.1]))
    np.testing.assert_allclose(rmse**2, bias**2 + sd**2, rtol=0, atol=1e-10)
    direct = np.sqrt(np.mean((est - [0.9, 1.0, 1.1]) ** 2, axis=0))
    np.testing.assert_allclose(rmse, direct, rtol=1e-12)


def test_log2_slope():
    J = 2.0 ** np.arange(9, 17)
    assert log2_slope(J, 3 * J**-0.5) == pytest.approx(-0.5, abs=1e-12)


def small_cfg(**kw):
    base = dict(J_values=(256, 512), target_empty_values=(0.5, 0.9), B=6, seed=3,
                methods=(Method.PL, Method.WCLRL, Method.CLRL))
    base.update(kw)
    return SimConfig(**base)


def test_sweep_full_regime_deterministic(tmp_path):
    cfg = small_cfg()
    assert cfg.resolved_regime == "full"
    a, b = run_sweep(cfg), run_sweep(cfg, n_jobs=3)
    a.write(tmp_path / "a.tsv")
    b.write(tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    header = (tmp_path / "a.tsv").read_text().splitlines()[0].split("\t")
    assert tuple(header) == SWEEP_COLUMNS
    assert len(a.rows) == 2 * 2 * 3 * 3
    for r in a.rows:
        assert r.rmse**2 == pytest.approx(r.bias**2 + r.sd**2, abs=1e-10)
        assert r.abs_bias == abs(r.bias)


def test_sweep_clrl_equals_wclrl():
    res = run_sweep(small_cfg(spec=SubsampleSpec(pi0=0.25), B=4))
    assert res.rows[0].pi0 == 0.25
    for J in (256, 512):
        for t in (0.5, 0.9):
            a = res.estimates[(Method.CLRL, J, t, 0.25)]
            b = res.estimates[(Method.WCLRL, J, t, 0.25)]
            np.testing.assert_allclose(a, b, atol=1e-6)


def test_sweep_subsample_regime_uses_one_simulation():
    cfg = small_cfg(spec=SubsampleSpec(pi0=1.0), regime="subsample", B=3, methods=(Method.PL,))
    res = run_sweep(cfg)
    # pi0 = pi1 = 1 draws keep everything, so every bag sees the same table
    est = res.estimates[(Method.PL, 256, 0.5, 1.0)]
    assert np.all(est == est[0])
    sd = res.curve(Method.PL, "sd", 1, 0.5)[1]
    assert np.all(sd == 0)


def test_sweep_pi0_grid():
    cfg = small_cfg(pi0_values=(0.5, 0.25), B=3, methods=(Method.BRL_CLOGLOG,))
    assert cfg.resolved_regime == "subsample"
    res = run_sweep(cfg)
    assert {r.pi0 for r in res.rows} == {0.5, 0.25}


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(J_values=(3,))
    with pytest.raises(ValueError):
        SimConfig(target_empty_values=(1.0,))
    with pytest.raises(ValueError):
        SimConfig(regime="bogus")
