"""Demand families, problem instances and nondimensionalization.

All models are stored in rescaled form: the price sensitivity ``q2`` is
absorbed into the price unit, so linear demand is ``q1 - a`` and
exponential demand is ``q1 * exp(-a)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ValidationError


class Family(str, enum.Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"


def default_a_max(q1: float) -> float:
    # exp(-a_max) < 1e-13, i.e. numerically zero demand
    return 30.0 * (1.0 + 1.0 / q1)


@dataclass(frozen=True)
class DemandModel:
    family: Family
    q1: float
    a_max: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not (self.q1 > 0 and math.isfinite(self.q1)):
            raise ValidationError(f"q1 must be positive and finite, got {self.q1}")
        if self.family is Family.LINEAR:
            if self.a_max is not None and self.a_max != self.q1:
                raise ValidationError("linear demand has A = [0, q1]; a_max cannot be set")
            object.__setattr__(self, "a_max", float(self.q1))
        else:
            a_max = default_a_max(self.q1) if self.a_max is None else float(self.a_max)
            if not (a_max > 0 and math.isfinite(a_max)):
                raise ValidationError(f"a_max must be positive and finite, got {a_max}")
            object.__setattr__(self, "a_max", a_max)

    @classmethod
    def linear(cls, q1: float) -> DemandModel:
        return cls(Family.LINEAR, q1)

    @classmethod
    def exponential(cls, q1: float, a_max: float | None = None) -> DemandModel:
        return cls(Family.EXPONENTIAL, q1, a_max)

    @property
    def price_interval(self) -> tuple[float, float]:
        return 0.0, self.a_max

    def __call__(self, a):
        """Vectorized demand, no domain check."""
        a = np.asarray(a, dtype=float)
        if self.family is Family.LINEAR:
            out = self.q1 - a
        else:
            out = self.q1 * np.exp(-a)
        return out if out.ndim else float(out)

    def project(self, a):
        out = np.clip(a, 0.0, self.a_max)
        return out if np.ndim(out) else float(out)

    def contains(self, a, tol: float = 0.0):
        a = np.asarray(a, dtype=float)
        return (a >= -tol) & (a <= self.a_max + tol)


def demand_at(model: DemandModel, a: float) -> float:
    """Expected demand rate at price ``a``; raises DomainError outside A."""
    lo, hi = model.price_interval
    if not a >= lo:
        raise DomainError(f"price {a} is below the lower bound {lo} of A")
    if not a <= hi:
        raise DomainError(f"price {a} is above the upper bound {hi} of A")
    return max(float(model(a)), 0.0)


def static_optimal_price(model: DemandModel, C: float) -> float:
    """Maximizer of (a + C) q(a) over A, ignoring the stock constraint."""
    if model.family is Family.LINEAR:
        return min(max(0.0, model.q1 - C) / 2.0, model.a_max)
    return min(max(0.0, 1.0 - C), model.a_max)


@dataclass(frozen=True)
class ProblemSpec:
    demand: DemandModel
    C: float
    sigma: float = 0.0

    def __post_init__(self):
        if not (self.C >= 0 and math.isfinite(self.C)):
            raise ValidationError(f"terminal cost C must be >= 0, got {self.C}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def q1(self) -> float:
        return self.demand.q1

    @property
    def delta(self) -> float:
        return static_optimal_price(self.demand, self.C)

    @property
    def beta(self) -> float:
        """Kink slope: s = (1 - t) g beta separates the two regimes (linear family)."""
        return min(self.q1, 0.5 * (self.q1 + self.C))

    def with_sigma(self, sigma: float) -> ProblemSpec:
        return ProblemSpec(self.demand, self.C, sigma)


@dataclass(frozen=True)
class RawMarketData:
    """Inputs in physical units.

    Raw demand is ``raw_q1 - raw_q2 * p`` (linear) or
    ``raw_q1 * exp(-raw_q2 * p)`` (exponential), in units per time unit.
    """

    initial_stock: float
    horizon: float
    reference_price: float
    raw_q1: float
    raw_q2: float
    raw_sigma: float = 0.0
    family: Family = Family.LINEAR
    terminal_cost: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        for name in ("initial_stock", "horizon", "reference_price", "raw_q1", "raw_q2"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValidationError(f"{name} must be strictly positive, got {v}")
        if not self.raw_sigma >= 0:
            raise ValidationError(f"raw_sigma must be >= 0, got {self.raw_sigma}")
        if not self.terminal_cost >= 0:
            raise ValidationError(f"terminal_cost must be >= 0, got {self.terminal_cost}")


@dataclass(frozen=True)
class Scaling:
    initial_stock: float
    horizon: float
    reference_price: float
    q2_hat: float
    family: Family = field(default=Family.LINEAR)

    @property
    def price_unit(self) -> float:
        """Currency value of one dimensionless (rescaled) price unit."""
        return self.reference_price / self.q2_hat

    @property
    def profit_unit(self) -> float:
        return self.initial_stock * self.price_unit

    def to_raw(self, spec: ProblemSpec) -> RawMarketData:
        S0, T, ref = self.initial_stock, self.horizon, self.reference_price
        return RawMarketData(
            initial_stock=S0,
            horizon=T,
            reference_price=ref,
            raw_q1=spec.q1 * S0 / T,
            raw_q2=self.q2_hat / ref if self.family is Family.EXPONENTIAL else self.q2_hat * S0 / (T * ref),
            raw_sigma=spec.sigma / math.sqrt(T),
            family=self.family,
            terminal_cost=spec.C * self.price_unit,
        )


def nondimensionalize(raw: RawMarketData, a_max: float | None = None) -> tuple[ProblemSpec, Scaling]:
    S0, T, ref = raw.initial_stock, raw.horizon, raw.reference_price
    q1 = T / S0 * raw.raw_q1
    if raw.family is Family.LINEAR:
        q2_hat = T / S0 * raw.raw_q2 * ref
        model = DemandModel.linear(q1)
    else:
        q2_hat = raw.raw_q2 * ref
        model = DemandModel.exponential(q1, a_max)
    scaling = Scaling(S0, T, ref, q2_hat, raw.family)
    spec = ProblemSpec(model, raw.terminal_cost / scaling.price_unit, math.sqrt(T) * raw.raw_sigma)
    return spec, scaling
