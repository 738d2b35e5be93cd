"""Acceptance criteria, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints
one ACCEPTANCE PASS/FAIL line per criterion.
"""

import functools
import math
import time

import numpy as np
import pytest
from conftest import cached_solution, example_spec

from dynprice.cli import main
from dynprice.config import load_config
from dynprice.demand import DemandModel, ProblemSpec
from dynprice.deterministic import DeterministicPolicy, MarketState, hjb_residual_deterministic
from dynprice.errors import PreconditionError
from dynprice.asymptotics import outer_correction, solve_inner_ode
from dynprice.hjb import SimilarityGrid, solve_value_pde
from dynprice.simulate import (
    FLAG_NONE,
    SimulationConfig,
    _block_multiplier,
    brownian_negative_sales_mc,
    compare_policies,
    negative_sales_probability,
    simulate_policy,
)

# 1 - P(alpha^D)/P(alpha^B) in units of 1e-3: mean, std, q05, q50, q95
REFERENCE = {
    0.05: [0.0, 0.4, -0.5, -0.2, 0.9],
    0.1: [0.2, 0.6, -0.4, -0.1, 1.4],
    0.2: [0.3, 0.7, -0.3, 0.0, 1.8],
    0.4: [0.4, 1.2, -0.3, 0.1, 1.8],
}


def _fmt(values):
    return "[" + ", ".join(f"{v:.3g}" for v in values) + "]"


@functools.lru_cache(maxsize=None)
def _compare(config_name: str, sigma: float):
    cfg = load_config(f"configs/{config_name}")
    spec = cfg.problem(sigma)
    hjb = cached_solution(sigma)
    t0 = time.perf_counter()
    stats = compare_policies(spec, DeterministicPolicy(spec), hjb, cfg.simulation())
    return stats, time.perf_counter() - t0


def _table_row(config_name, sigma, tol, record_property):
    stats, secs = _compare(config_name, sigma)
    got = np.array(stats.row()[1:])
    dev = np.abs(got - 1e-3 * np.array(REFERENCE[sigma]))
    record_property("got_1e-3", _fmt(1e3 * got))
    record_property("max_dev", f"{dev.max():.2e}")
    record_property("tol", f"{tol:g}")
    return dev, secs


# 1. Reference profit statistics

@pytest.mark.acceptance(1, "reference profit statistics")
@pytest.mark.parametrize("sigma", sorted(REFERENCE))
def test_reference_stats_full(sigma, record_property):
    dev, _ = _table_row("reference_stats.toml", sigma, 1.5e-4, record_property)
    assert dev.max() <= 1.5e-4


@pytest.mark.acceptance(1, "reference profit statistics")
@pytest.mark.parametrize("sigma", sorted(REFERENCE))
def test_reference_stats_smoke(sigma, record_property):
    dev, secs = _table_row("reference_stats_smoke.toml", sigma, 5e-4, record_property)
    record_property("sim_seconds", f"{secs:.2f}")
    assert secs < 10.0
    assert dev.max() <= 5e-4


# 2. Deterministic degeneration

def _degeneration_errors(n_xi):
    spec = example_spec(0.0)
    sol = cached_solution(0.0, n_xi)
    g = sol.grid
    T, X = np.meshgrid(g.taus, g.xi, indexing="ij")
    det = DeterministicPolicy(spec)
    v_err = np.abs(sol.phi - det.value(1 - T, X, 1.0)).max()
    away = (np.abs(X - spec.beta * T) > 2.5 * g.dxi) & (T > 0)
    p_err = np.abs(sol.psi - det.price(1 - T, X, 1.0))[away].max()
    return v_err, p_err


@pytest.mark.acceptance(2, "deterministic degeneration")
def test_degeneration_errors(record_property):
    v, p = _degeneration_errors(2001)
    record_property("value_err", f"{v:.2e}")
    record_property("price_err", f"{p:.2e}")
    assert v <= 1e-3
    assert p <= 2e-3


@pytest.mark.acceptance(2, "deterministic degeneration")
def test_degeneration_refinement(record_property):
    v1, p1 = _degeneration_errors(2001)
    v2, p2 = _degeneration_errors(4001)
    record_property("value_ratio", f"{v1 / v2:.2f}")
    record_property("price_ratio", f"{p1 / p2:.2f}")
    assert v1 / v2 >= 3.0
    assert p1 / p2 >= 3.0


# 3. Closed-form HJB verification

REGIMES = {
    "linear C<q1": ProblemSpec(DemandModel.linear(1.5), 0.5),
    "linear C>=q1": ProblemSpec(DemandModel.linear(1.0), 1.5),
    "exponential C<1": ProblemSpec(DemandModel.exponential(1.0), 0.5),
    "exponential C>=1": ProblemSpec(DemandModel.exponential(1.0), 1.5),
}


@pytest.mark.acceptance(3, "closed-form HJB verification")
@pytest.mark.parametrize("regime", list(REGIMES))
def test_closed_form_residual(regime, record_property):
    policy = DeterministicPolicy(REGIMES[regime])
    rng = np.random.default_rng(3)
    worst, n, branches = 0.0, 0, set()
    while n < 1000:
        t, s, g = rng.uniform(0.0, 0.98), rng.uniform(0.0, 3.0), rng.uniform(0.05, 3.0)
        x = MarketState(t, s, g)
        try:
            r = hjb_residual_deterministic(policy, x, 1e-5)
        except PreconditionError:
            continue
        worst = max(worst, abs(r))
        branches.add(bool(policy.is_sellout(t, s, g)))
        n += 1
    record_property("max_residual", f"{worst:.2e}")
    assert branches == {True, False}
    assert worst <= 1e-6


# 4. Estimator quality

@pytest.mark.acceptance(4, "estimator quality")
def test_estimator_coverage(record_property):
    spec = example_spec(0.1)
    res = simulate_policy(spec, DeterministicPolicy(spec), SimulationConfig(2000, seed=11), record=True)
    ok = res.flags[:, 1:] == FLAG_NONE
    err = np.abs(1.0 - res.estimate[:, 1:] / res.multiplier[:, 1:])[ok][:100_000]
    cover = float(np.mean(err <= 0.01))
    record_property("samples", err.size)
    record_property("coverage", f"{cover:.4f}")
    assert err.size == 100_000
    assert cover >= 0.95


# 5. Negative-sales demonstration

@pytest.mark.acceptance(5, "negative-sales demonstration")
@pytest.mark.parametrize("dt", [1e-2, 1e-4])
def test_negative_sales_mc(dt, record_property):
    n = 100_000
    p = negative_sales_probability(1.0, 0.05, dt)
    frac, _ = brownian_negative_sales_mc(1.0, 0.05, dt, n, seed=5)
    se = math.sqrt(p * (1 - p) / n)
    record_property("p", f"{p:.5f}")
    record_property("mc", f"{frac:.5f}")
    record_property("z", f"{(frac - p) / se:.2f}")
    assert abs(frac - p) <= 3 * se


@pytest.mark.acceptance(5, "negative-sales demonstration")
def test_negative_sales_trend(record_property):
    dts = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 1e-5, 1e-6, 1e-8]
    p = [negative_sales_probability(1.0, 0.05, dt) for dt in dts]
    record_property("p", _fmt(p))
    assert all(a < b for a, b in zip(p, p[1:]))
    assert p[-1] < 0.5 and 0.5 - p[-1] < 1e-3


# 6. GBM moments

@pytest.mark.acceptance(6, "GBM moments")
@pytest.mark.parametrize("sigma", [0.1, 0.4])
def test_gbm_moments(sigma, record_property):
    cfg = SimulationConfig(100_000, seed=17)
    g1 = _block_multiplier(sigma, cfg, 0, cfg.n_paths)[:, -1]
    n = g1.size
    mean, var = g1.mean(), g1.var(ddof=1)
    m4 = np.mean((g1 - mean) ** 4)
    se_mean = math.sqrt(var / n)
    se_var = math.sqrt((m4 - var**2 * (n - 3) / (n - 1)) / n)
    target = math.expm1(sigma**2)
    record_property("z_mean", f"{(mean - 1) / se_mean:.2f}")
    record_property("z_var", f"{(var - target) / se_var:.2f}")
    assert abs(mean - 1.0) <= 3 * se_mean
    assert abs(var - target) <= 3 * se_var


# 7. Asymptotic cross-validation

@pytest.mark.acceptance(7, "asymptotic cross-validation")
@pytest.mark.parametrize("sigma", [0.1, 0.2])
def test_inner_layer_at_kink(sigma, record_property):
    spec = example_spec(sigma)
    sol = cached_solution(sigma)
    inner = solve_inner_ode(spec.beta)
    ratios = []
    for tau in (0.3, 0.5, 0.7):
        approx = spec.delta + sigma * math.sqrt(tau) * inner.f0
        err = abs(sol.price(1 - tau, spec.beta * tau, 1.0) - approx)
        ratios.append(err / (sigma * math.sqrt(tau)))
    record_property("err_over_sigma_sqrt_tau", _fmt(ratios))
    assert max(ratios) <= 0.15


@pytest.mark.acceptance(7, "asymptotic cross-validation")
def test_outer_correction(record_property):
    spec = example_spec(0.2)
    sol = cached_solution(0.2)
    errs = []
    for tau in (0.3, 0.5, 0.7):
        xi = 0.5 * spec.beta * tau
        errs.append(abs(sol.price(1 - tau, xi, 1.0) - outer_correction(spec, 1 - tau, xi, 1.0)))
    record_property("outer_err", _fmt(errs))
    assert max(errs) <= 2e-3


# 8. Profit direction

@pytest.mark.acceptance(8, "profit direction")
def test_profit_direction(record_property):
    stats, _ = _compare("reference_stats.toml", 0.1)
    record_property("mean_gain", f"{stats.mean_gain:.3e}")
    record_property("stderr", f"{stats.stderr_gain:.1e}")
    record_property("median", f"{stats.median:.3e}")
    assert stats.mean_gain >= -3 * stats.stderr_gain
    assert stats.median <= 0.0


# 9. Determinism

@pytest.mark.acceptance(9, "determinism")
def test_stats_csv_byte_identical(tmp_path, record_property):
    base = ["compare", "--set", "solver.n_xi=501", "--set", "simulation.n_paths=20000",
            "--set", "compare.sigmas=[0.1, 0.4]", "--set", "simulation.seed=99",
            "--set", "simulation.block_size=1500"]
    blobs = []
    for i, threads in enumerate((1, 4, 4, 1)):
        out = tmp_path / f"run{i}"
        assert main([*base, "-o", str(out), "--set", f"simulation.threads={threads}"]) == 0
        blobs.append((out / "compare_stats.csv").read_bytes())
    record_property("runs", "threads 1,4,4,1")
    assert all(b == blobs[0] for b in blobs)
