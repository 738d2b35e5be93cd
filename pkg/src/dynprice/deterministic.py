"""Closed-form pricing and value functions of the sigma = 0 system.

The optimal deterministic policy holds the price constant for the rest of
the horizon: it either sells out exactly at the highest feasible price, or
charges the static optimal price ``delta`` when stock is plentiful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .demand import Family, ProblemSpec
from .errors import PreconditionError, ValidationError


@dataclass(frozen=True)
class MarketState:
    t: float
    s: float
    g: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValidationError(f"t must lie in [0, 1], got {self.t}")
        if not self.s >= 0.0:
            raise ValidationError(f"s must be >= 0, got {self.s}")
        if not self.g >= 0.0:
            raise ValidationError(f"g must be >= 0, got {self.g}")

    @property
    def tau(self) -> float:
        return 1.0 - self.t


def hamiltonian(spec: ProblemSpec, p):
    """max over A of (a - p) q(a), and the maximizing price."""
    model = spec.demand
    p = np.asarray(p, dtype=float)
    if model.family is Family.LINEAR:
        a = np.clip(0.5 * (model.q1 + p), 0.0, model.a_max)
        return (a - p) * (model.q1 - a), a
    a = np.clip(1.0 + p, 0.0, model.a_max)
    return (a - p) * model.q1 * np.exp(-a), a


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class DeterministicPolicy:
    """Optimal feedback price a(t, s, g) of the deterministic problem.

    Calling the policy evaluates the price; arguments broadcast as numpy
    arrays.
    """

    spec: ProblemSpec

    @property
    def family(self) -> Family:
        return self.spec.demand.family

    @property
    def beta(self) -> float:
        return self.spec.beta

    @property
    def delta(self) -> float:
        return self.spec.delta

    @property
    def threshold(self) -> float:
        # exponential family: sell-out region is s / (q1 g (1-t)) <= threshold
        return math.exp(min(self.spec.C, 1.0) - 1.0)

    @property
    def flat_value_rate(self) -> float:
        """V(C): value per unit of (1 - t) g in the non-sell-out region."""
        q1, C = self.spec.q1, self.spec.C
        if self.family is Family.LINEAR:
            return (0.5 * (q1 + C)) ** 2 if C < q1 else q1 * C
        return q1 * math.exp(C - 1.0) if C < 1.0 else q1 * C

    def _regime(self, t, s, g):
        t, s, g = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, s, g)))
        cap = (1.0 - t) * g
        if self.family is Family.LINEAR:
            sellout = s <= cap * self.beta
        else:
            sellout = s <= cap * self.spec.q1 * self.threshold
        # (1-t) g = 0 with s > 0 falls to the flat branch by the limit convention
        sellout = sellout & ((cap > 0) | (s == 0))
        return s, cap, sellout

    def price(self, t, s, g=1.0):
        s, cap, sellout = self._regime(t, s, g)
        q1 = self.spec.q1
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family is Family.LINEAR:
                inner = np.where(s > 0, q1 - s / cap, q1)
            else:
                inner = np.where(s > 0, np.log(q1 * cap / s), np.inf)
        out = np.where(sellout, inner, self.delta)
        return _scalar(self.spec.demand.project(out))

    __call__ = price

    def value(self, t, s, g=1.0):
        s, cap, sellout = self._regime(t, s, g)
        q1, C = self.spec.q1, self.spec.C
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family is Family.LINEAR:
                inner = np.where(s > 0, q1 * s - s * s / cap, 0.0)
            else:
                inner = np.where(s > 0, s * np.log(q1 * cap / s), 0.0)
        flat = -C * s + self.flat_value_rate * cap
        return _scalar(np.where(sellout, inner, flat))

    def is_sellout(self, t, s, g=1.0):
        return _scalar(self._regime(t, s, g)[2])


def _require(policy: DeterministicPolicy, family: Family):
    if policy.family is not family:
        raise PreconditionError(f"policy has {policy.family.value} demand, expected {family.value}")


def price_linear(policy: DeterministicPolicy, x: MarketState) -> float:
    _require(policy, Family.LINEAR)
    return policy.price(x.t, x.s, x.g)


def price_exponential(policy: DeterministicPolicy, x: MarketState) -> float:
    _require(policy, Family.EXPONENTIAL)
    return policy.price(x.t, x.s, x.g)


def value_linear(policy: DeterministicPolicy, x: MarketState) -> float:
    _require(policy, Family.LINEAR)
    return policy.value(x.t, x.s, x.g)


def value_exponential(policy: DeterministicPolicy, x: MarketState) -> float:
    _require(policy, Family.EXPONENTIAL)
    return policy.value(x.t, x.s, x.g)


def value_gradient(policy: DeterministicPolicy, x: MarketState, h: float):
    """Central-difference (v_t, v_s, v_g) of the closed-form value."""
    v = policy.value
    vt = (v(x.t + h, x.s, x.g) - v(x.t - h, x.s, x.g)) / (2 * h)
    vs = (v(x.t, x.s + h, x.g) - v(x.t, x.s - h, x.g)) / (2 * h)
    vg = (v(x.t, x.s, x.g + h) - v(x.t, x.s, x.g - h)) / (2 * h)
    return vt, vs, vg


def check_smooth_point(policy: DeterministicPolicy, x: MarketState, h: float) -> None:
    """Raise PreconditionError unless x is 2h-interior to one smooth branch."""
    margin = 2.0 * h
    if x.t + margin >= 1.0 or x.t - margin < 0.0 or x.s - margin <= 0.0 or x.g - margin <= 0.0:
        raise PreconditionError(f"{x} is within {margin:g} of the boundary")
    offsets = (-margin, 0.0, margin)
    t = np.array([x.t + d for d in offsets] + [x.t] * 6)
    s = np.array([x.s] * 3 + [x.s + d for d in offsets] + [x.s] * 3)
    g = np.array([x.g] * 6 + [x.g + d for d in offsets])
    regimes = policy.is_sellout(t, s, g)
    if regimes.min() != regimes.max():
        raise PreconditionError(f"{x} is within {margin:g} of the regime kink")


def hjb_residual_deterministic(policy: DeterministicPolicy, x: MarketState, h: float = 1e-5) -> float:
    """Residual v_t + g max_a (a - v_s) q(a) of the closed-form value at x."""
    check_smooth_point(policy, x, h)
    vt, vs, _ = value_gradient(policy, x, h)
    H, _ = hamiltonian(policy.spec, vs)
    return float(vt + x.g * H)
