import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynprice.demand import (
    DemandModel,
    Family,
    ProblemSpec,
    RawMarketData,
    default_a_max,
    demand_at,
    nondimensionalize,
    static_optimal_price,
)
from dynprice.errors import DomainError, ValidationError


def test_demand_examples():
    assert demand_at(DemandModel.linear(1.5), 0.5) == pytest.approx(1.0)
    assert demand_at(DemandModel.linear(1.5), 1.5) == 0.0
    assert demand_at(DemandModel.exponential(1.0), 0.0) == 1.0


def test_demand_outside_interval_names_bound():
    lin = DemandModel.linear(1.5)
    with pytest.raises(DomainError, match="upper bound"):
        demand_at(lin, 1.6)
    with pytest.raises(DomainError, match="lower bound"):
        demand_at(lin, -0.1)
    exp = DemandModel.exponential(1.0, a_max=5.0)
    with pytest.raises(DomainError, match="upper bound 5"):
        demand_at(exp, 5.5)


def test_model_validation():
    with pytest.raises(ValidationError):
        DemandModel.linear(0.0)
    with pytest.raises(ValidationError):
        DemandModel.linear(-1.0)
    with pytest.raises(ValidationError):
        DemandModel(Family.LINEAR, 1.0, a_max=2.0)
    with pytest.raises(ValidationError):
        DemandModel.exponential(1.0, a_max=-1.0)
    with pytest.raises(ValidationError):
        ProblemSpec(DemandModel.linear(1.0), C=-0.1)
    with pytest.raises(ValidationError):
        ProblemSpec(DemandModel.linear(1.0), C=0.1, sigma=-0.2)


def test_price_intervals():
    assert DemandModel.linear(1.5).price_interval == (0.0, 1.5)
    exp = DemandModel.exponential(2.0)
    assert exp.price_interval == (0.0, default_a_max(2.0))
    # the truncated tail carries numerically no demand
    assert exp(exp.a_max) < 1e-13 * exp.q1


def test_static_optimal_price_examples():
    assert static_optimal_price(DemandModel.linear(1.5), 0.5) == pytest.approx(0.5)
    assert static_optimal_price(DemandModel.linear(1.0), 1.5) == 0.0
    assert static_optimal_price(DemandModel.exponential(1.0), 0.25) == pytest.approx(0.75)


@settings(max_examples=50, deadline=None)
@given(q1=st.floats(0.1, 5.0), a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0))
def test_demand_strictly_decreasing(q1, a, b):
    for model in (DemandModel.linear(q1), DemandModel.exponential(q1, a_max=10.0)):
        lo, hi = sorted((a, b))
        x, y = lo * model.a_max, hi * model.a_max
        if y - x > 1e-9 and y < model.a_max:
            assert model(x) > model(y)
        assert demand_at(model, x) >= 0


def test_static_optimal_price_is_grid_maximizer():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        q1 = rng.uniform(0.1, 4.0)
        C = rng.uniform(0.0, 5.0)
        for model in (DemandModel.linear(q1), DemandModel.exponential(q1, a_max=8.0)):
            grid = np.linspace(0.0, model.a_max, 10_000)
            best = grid[np.argmax((grid + C) * model(grid))]
            cell = grid[1] - grid[0]
            assert abs(static_optimal_price(model, C) - best) <= cell


def test_nondimensionalize_identity():
    raw = RawMarketData(1.0, 1.0, 1.0, raw_q1=1.5, raw_q2=1.0, raw_sigma=0.1, terminal_cost=0.5)
    spec, scale = nondimensionalize(raw)
    assert spec.q1 == pytest.approx(1.5)
    assert spec.sigma == pytest.approx(0.1)
    assert spec.C == pytest.approx(0.5)
    assert scale.q2_hat == pytest.approx(1.0)


def test_nondimensionalize_store_example():
    raw = RawMarketData(1000.0, 4.0, 10.0, raw_q1=500.0, raw_q2=25.0, raw_sigma=0.05)
    spec, scale = nondimensionalize(raw)
    assert spec.q1 == pytest.approx(2.0)
    assert scale.q2_hat == pytest.approx(1.0)
    assert spec.sigma == pytest.approx(0.1)
    # q-hat(a-hat) = T/S0 * q(a-hat * ref)
    a_hat = 0.7
    assert spec.demand(a_hat) == pytest.approx(4 / 1000 * (500 - 25 * a_hat * 10))


def test_nondimensionalize_rejects_nonpositive():
    for bad in ({"initial_stock": 0.0}, {"horizon": -1.0}, {"reference_price": 0.0}):
        kw = dict(initial_stock=1.0, horizon=1.0, reference_price=1.0, raw_q1=1.0, raw_q2=1.0)
        kw.update(bad)
        with pytest.raises(ValidationError):
            RawMarketData(**kw)


@settings(max_examples=100, deadline=None)
@given(
    S0=st.floats(1e-2, 1e4), T=st.floats(1e-2, 1e2), ref=st.floats(1e-2, 1e3),
    q1=st.floats(1e-2, 1e3), q2=st.floats(1e-3, 1e2), sig=st.floats(0.0, 2.0),
    cost=st.floats(0.0, 10.0), family=st.sampled_from(list(Family)),
)
def test_round_trip_recovers_raw(S0, T, ref, q1, q2, sig, cost, family):
    raw = RawMarketData(S0, T, ref, q1, q2, sig, family, cost)
    spec, scale = nondimensionalize(raw)
    back = scale.to_raw(spec)
    for name in ("raw_q1", "raw_q2", "raw_sigma", "terminal_cost"):
        assert math.isclose(getattr(back, name), getattr(raw, name), rel_tol=1e-12, abs_tol=1e-300)
