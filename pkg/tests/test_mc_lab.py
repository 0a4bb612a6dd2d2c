import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import paper_inputs
from fou_portfolio.asymptotics import ExpansionInputs, practical_strategy
from fou_portfolio.fou_engine import FouParams, make_grid, simulate_factor
from fou_portfolio.market_model import constant_model
from fou_portfolio.mc_lab import (
    Perturbation,
    StrategySpec,
    UnsupportedEstimatorError,
    constant_perturbation,
    estimate_value_direct,
    estimate_value_optimal,
    estimate_value_pi0,
    estimate_value_practical,
    gap,
    optimality_probe,
    pi0_strategy,
    run_estimators,
    simulate_wealth,
    table1_row,
    weighted_slope,
    zero_perturbation,
)
from fou_portfolio.merton_engine import UtilitySpec, mixture_utility

POWER = UtilitySpec.power(0.4)
DT = 1e-2


def constant_inputs(eps=0.1, rho=-0.5, lam=0.7, gamma=0.4):
    p = FouParams(1.0, 0.6, eps)
    return ExpansionInputs.build(p, constant_model(lam, 0.2, gamma, rho))


def grid_for(inp, dt=DT):
    return make_grid(inp.T, dt, inp.params)


def within(a, b, k=3.0):
    return abs(a.estimate - b.estimate) <= k * math.hypot(a.std_error, b.std_error)


# -- degenerate (constant lambda) cases -----------------------------------------------


def test_constant_lambda_rho_zero_exact():
    inp = constant_inputs(rho=0.0)
    r = estimate_value_optimal(inp, grid_for(inp), 2000, seed=1, mode="raw")
    exact = math.exp(0.75 * 0.49)
    assert abs(r.normalized - exact) <= max(3 * r.normalized_se, 1e-12 * exact)


def test_constant_lambda_distortion_exact_with_correlation():
    inp = constant_inputs(rho=-0.5)
    r = estimate_value_optimal(inp, grid_for(inp), 20000, seed=2, mode="raw")
    assert abs(r.normalized - math.exp(0.75 * 0.49)) <= 3 * r.normalized_se


@pytest.mark.parametrize("rho", [0.0, -0.5, 0.7])
def test_constant_lambda_pi0_is_optimal(rho):
    inp = constant_inputs(rho=rho)
    row = table1_row(inp, grid_for(inp), 20000, seed=3, mode="raw")
    assert abs(row.gap_pi0.estimate) <= 3 * row.gap_pi0.std_error + 1e-12
    assert abs(row.gap_practical.estimate) <= 3 * row.gap_practical.std_error + 1e-12
    assert row.c_star == pytest.approx(0.7 / (0.4 * 0.2))


def test_gamma_two_sanity_direction():
    vals = []
    for lam in (0.3, 0.5, 0.7):
        inp = constant_inputs(lam=lam, gamma=2.0, rho=0.0)
        vals.append(estimate_value_optimal(inp, grid_for(inp), 500, seed=1, mode="raw").estimate)
    assert all(v < 0 for v in vals)
    assert abs(vals[0]) > abs(vals[1]) > abs(vals[2])
    assert vals[2] == pytest.approx(-math.exp(-0.25 * 0.49), rel=1e-12)


# -- estimator plumbing ---------------------------------------------------------------


def test_non_power_utility_rejected():
    inp = paper_inputs(0.1)
    with pytest.raises(UnsupportedEstimatorError):
        estimate_value_pi0(inp, grid_for(inp), 10, seed=1, utility=mixture_utility())
    with pytest.raises(UnsupportedEstimatorError):
        optimality_probe(inp, StrategySpec("pi0", mixture_utility()), [0.1], DT, 10, seed=1)


def test_alpha_must_be_positive():
    for alpha in (0.0, -0.3):
        with pytest.raises(ValueError):
            StrategySpec("perturbed", POWER, base=pi0_strategy(POWER), perturbation=constant_perturbation(1.0), alpha=alpha)


def test_bad_mode_rejected():
    inp = paper_inputs(0.1)
    with pytest.raises(ValueError):
        run_estimators(inp, grid_for(inp), 10, 1, mode="antithetic")


def test_report_fields_and_reproducibility():
    inp = paper_inputs(0.1)
    g = grid_for(inp)
    a = estimate_value_practical(inp, g, 3000, seed=7, omega=2)
    b = estimate_value_practical(inp, g, 3000, seed=7, omega=2)
    assert a.estimate == b.estimate and a.std_error == b.std_error
    assert (a.seed, a.omega_id, a.n_paths, a.estimator_id) == (7, 2, 3000, "practical")
    assert a.std_error > 0
    assert a.std_error == pytest.approx(np.std(a.influence, ddof=1) / math.sqrt(3000), rel=1e-12)


def test_modes_agree():
    inp = paper_inputs(0.1)
    g = grid_for(inp)
    reps = {m: run_estimators(inp, g, 20000, seed=4, mode=m) for m in ("raw", "conditional", "control")}
    for name in ("optimal", "pi0", "practical"):
        assert within(reps["raw"][name], reps["control"][name])
        assert within(reps["conditional"][name], reps["control"][name])
        assert reps["control"][name].std_error <= reps["raw"][name].std_error


def test_crn_toggle_means_agree():
    inp = paper_inputs(0.05)
    g = grid_for(inp)
    on = table1_row(inp, g, 20000, seed=5, crn=True)
    off = table1_row(inp, g, 20000, seed=5, crn=False)
    for name in ("optimal", "pi0", "practical"):
        assert within(getattr(on, name), getattr(off, name))
    assert off.gap_pi0.std_error >= on.gap_pi0.std_error
    assert abs(on.gap_pi0.estimate - off.gap_pi0.estimate) <= 3 * math.hypot(on.gap_pi0.std_error, off.gap_pi0.std_error)


def test_thread_determinism():
    inp = paper_inputs(0.1)
    g = grid_for(inp)
    a = table1_row(inp, g, 1500, seed=6, workers=1)
    b = table1_row(inp, g, 1500, seed=6, workers=3)
    for name in ("optimal", "pi0", "practical"):
        assert getattr(a, name).estimate == getattr(b, name).estimate
        assert getattr(a, name).std_error == getattr(b, name).std_error


def test_gap_paired_and_unpaired_se():
    inp = paper_inputs(0.1)
    r = run_estimators(inp, grid_for(inp), 5000, seed=8)
    p = gap(r["optimal"], r["pi0"], "g", paired=True)
    u = gap(r["optimal"], r["pi0"], "g", paired=False)
    assert p.estimate == u.estimate
    assert u.std_error == pytest.approx(math.hypot(r["optimal"].std_error, r["pi0"].std_error))
    assert p.std_error < u.std_error
    assert p.normalized == pytest.approx(0.6 * p.estimate)


# -- wealth simulation ----------------------------------------------------------------


@pytest.fixture(scope="module")
def factor_paths():
    inp = paper_inputs(0.1)
    return inp, simulate_factor(inp.params, grid_for(inp), inp.rho, seed=11, n_paths=4)


def test_zero_strategy_keeps_wealth(factor_paths):
    inp, paths = factor_paths
    for fp in paths:
        w = simulate_wealth(StrategySpec("zero", POWER), fp, 1.7, inp)
        assert np.all(w.wealth == 1.7) and not w.flagged


def test_pi0_wealth_closed_form(factor_paths):
    inp, paths = factor_paths
    g = 0.4
    for fp in paths:
        y = fp.y_values[:-1]
        lam2 = inp.model.lambda_sq(y)
        lam = np.sqrt(lam2)
        ref = ((lam2 / g - lam2 / (2 * g * g)) * fp.grid.dt).sum() + (lam / g * fp.w_increments).sum()
        w = simulate_wealth(pi0_strategy(POWER), fp, 1.0, inp)
        assert math.log(w.terminal) == pytest.approx(ref, abs=1e-12)


def test_euler_path_for_general_utility(factor_paths):
    inp, paths = factor_paths
    w = simulate_wealth(pi0_strategy(mixture_utility()), paths[0], 1.0, inp)
    assert w.wealth.shape == (paths[0].grid.n_steps + 1,)
    assert np.all(w.wealth >= 0) and not w.flagged


def test_wealth_domain(factor_paths):
    inp, paths = factor_paths
    with pytest.raises(ValueError):
        simulate_wealth(pi0_strategy(POWER), paths[0], 0.0, inp)


def test_nonfinite_wealth_is_flagged(factor_paths):
    inp, paths = factor_paths
    bad = Perturbation(lambda t, y: np.where(y > 0, np.nan, 0.0), "nan")
    cand = StrategySpec("perturbed", POWER, base=pi0_strategy(POWER), perturbation=bad, alpha=1.0)
    assert simulate_wealth(cand, paths[0], 1.0, inp).flagged
    assert not simulate_wealth(pi0_strategy(POWER), paths[0], 1.0, inp).flagged


def test_direct_matches_estimator():
    inp = paper_inputs(0.1)
    g = grid_for(inp)
    direct = estimate_value_direct(pi0_strategy(POWER), inp, g, 20000, seed=9)
    raw = estimate_value_pi0(inp, g, 20000, seed=9, mode="raw")
    ctl = estimate_value_pi0(inp, g, 20000, seed=9, mode="control")
    # the raw functional is the direct wealth simulation on the same increments
    assert direct.estimate == pytest.approx(raw.estimate, rel=1e-10)
    assert within(direct, ctl)


# -- optimality probe -------------------------------------------------------------------


def test_zero_perturbation_gap_exactly_zero():
    inp = paper_inputs(0.1)
    cand = StrategySpec("perturbed", POWER, base=pi0_strategy(POWER), perturbation=zero_perturbation(), alpha=0.5)
    res = optimality_probe(inp, cand, [0.2, 0.05], DT, 2000, seed=1)
    assert np.all(res.gaps == 0.0)


def test_probe_small_perturbation_vanishes_faster():
    # alpha = 2 is deep in the l = 0 regime: gap / eps^(1-H) shrinks with eps
    inp = paper_inputs(0.1)
    c = 0.25 * practical_strategy(inp).c_star
    cand = StrategySpec("perturbed", POWER, base=pi0_strategy(POWER), perturbation=constant_perturbation(c), alpha=2.0)
    res = optimality_probe(inp, cand, [0.2, 0.05, 0.01], DT, 5000, seed=2)
    r = np.abs([row.ratio for row in res.rows])
    assert r[-1] < r[0] and r[-1] < 1e-3


def test_probe_large_perturbation_negative():
    inp = paper_inputs(0.1)
    c = 0.25 * practical_strategy(inp).c_star
    cand = StrategySpec("perturbed", POWER, base=pi0_strategy(POWER), perturbation=constant_perturbation(c), alpha=0.1)
    res = optimality_probe(inp, cand, [0.1, 0.01], DT, 5000, seed=3)
    assert np.all(res.gaps + 3 * res.ses < 0)


def test_weighted_slope_exact_line():
    x = np.array([0.1, 0.05, 0.01])
    s, se = weighted_slope(np.log(x), np.log(3 * x**0.7), np.full(3, 0.01))
    assert s == pytest.approx(0.7, abs=1e-12)


@settings(max_examples=10)
@given(c=st.floats(-3, 3), alpha=st.floats(0.05, 3))
def test_perturbed_fraction_property(c, alpha):
    inp = paper_inputs(0.1)
    base = pi0_strategy(POWER)
    cand = StrategySpec("perturbed", POWER, base=base, perturbation=constant_perturbation(c), alpha=alpha)
    y = np.linspace(-1, 1, 7)
    t = np.zeros_like(y)
    np.testing.assert_allclose(cand.fraction(t, y, inp) - base.fraction(t, y, inp), 0.1**alpha * c, atol=1e-12)


# -- paper configuration ------------------------------------------------------------------


@pytest.fixture(scope="module")
def ladder():
    """Table-1 estimators over an eps ladder at a reduced path count."""
    out = {}
    for eps in (1.0, 0.5, 0.1, 0.05, 0.01):
        inp = paper_inputs(eps)
        out[eps] = table1_row(inp, make_grid(1.0, 2e-3, inp.params), 20000, seed=1, omega=1)
    return out


def test_ordering_over_ladder(ladder):
    for eps, row in ladder.items():
        assert row.gap_pi0.z > 2, eps
        assert row.practical.estimate < row.pi0.estimate
        d = gap(row.pi0, row.practical, "pi0 - practical")
        assert d.z > 2, eps


def test_gap_scaling_slope(ladder):
    eps = np.array([0.1, 0.05, 0.01])
    g = np.array([ladder[e].gap_pi0.estimate for e in eps])
    se = np.array([ladder[e].gap_pi0.std_error for e in eps])
    slope, _ = weighted_slope(np.log(eps), np.log(g), se / g)
    assert slope > 0.4 - 0.2


@pytest.fixture(scope="module")
def omegas_001():
    inp = paper_inputs(0.01)
    g = make_grid(1.0, 2e-3, inp.params)
    return [table1_row(inp, g, 20000, seed=1, omega=w) for w in (1, 2, 3)]


def test_value_band_at_small_eps(omegas_001):
    for row in omegas_001:
        assert abs(row.optimal.normalized - 1.44) <= 0.02


@pytest.mark.xfail(strict=True, reason="the pi0 gap measured here is about 1.9e-4, an order below the tabulated 0.0015")
def test_tabulated_pi0_gap(omegas_001):
    for row in omegas_001:
        assert row.gap_pi0.normalized == pytest.approx(0.0015, rel=0.3)


@pytest.mark.xfail(strict=True, reason="relative pi0 gap is about 0.013%, not 0.1%")
def test_quoted_pi0_relative_gap(omegas_001):
    for row in omegas_001:
        assert row.gap_pi0.estimate / row.optimal.estimate == pytest.approx(1e-3, rel=0.5)


@pytest.mark.xfail(strict=True, reason="practical gap measured at 0.068-0.070, slightly below the tabulated 0.0724-0.0748")
def test_tabulated_practical_gap(omegas_001):
    for row in omegas_001:
        assert 0.0715 <= row.gap_practical.normalized <= 0.0755


def test_quoted_practical_relative_gap(omegas_001):
    for row in omegas_001:
        assert row.gap_practical.estimate / row.optimal.estimate == pytest.approx(0.05, abs=0.005)
