"""Monte-Carlo simulation of the controlled stock under a GBM demand multiplier.

Prices are held constant on ``[t_k, t_k + dt)`` and reset from the observed
state; stock depletes at ``q(a_k) G(t)``. Every path draws from its own
counter-based stream keyed by ``(seed, path index)``, so results do not depend
on block size or thread count.
"""

from __future__ import annotations

import enum
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .demand import ProblemSpec
from .errors import PolicyPriceError, ValidationError

Policy = Callable[..., np.ndarray]


class EstimatorMode(str, enum.Enum):
    EXACT = "exact"          # policy sees the true G(t_k)
    ESTIMATED = "estimated"  # policy sees G-hat from the last interval's sales


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int
    dt: float = 0.01
    substeps: int = 1
    seed: int = 0
    estimator: EstimatorMode = EstimatorMode.ESTIMATED
    initial_stock: float = 1.0
    threads: int = 1
    block_size: int = 4096

    def __post_init__(self):
        try:
            object.__setattr__(self, "estimator", EstimatorMode(self.estimator))
        except ValueError:
            raise ValidationError(f"estimator must be 'exact' or 'estimated', got {self.estimator!r}") from None
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValidationError(f"n_paths must be a positive integer, got {self.n_paths}")
        if not (0 < self.dt <= 1):
            raise ValidationError(f"dt must lie in (0, 1], got {self.dt}")
        k = round(1.0 / self.dt)
        if abs(k * self.dt - 1.0) > 1e-9:
            raise ValidationError(f"1/dt must be an integer, got dt={self.dt}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValidationError(f"substeps must be an integer >= 1, got {self.substeps}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be an integer in [0, 2^64), got {self.seed}")
        if not (self.initial_stock >= 0 and math.isfinite(self.initial_stock)):
            raise ValidationError(f"initial_stock must be finite and >= 0, got {self.initial_stock}")
        if int(self.threads) != self.threads or self.threads < 1:
            raise ValidationError(f"threads must be a positive integer, got {self.threads}")
        if int(self.block_size) != self.block_size or self.block_size < 1:
            raise ValidationError(f"block_size must be a positive integer, got {self.block_size}")

    @property
    def n_steps(self) -> int:
        return round(1.0 / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


def path_generator(seed: int, index: int) -> np.random.Generator:
    """Independent stream for one path: Philox keyed by the seed, counter offset by the index."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(index)]))


def sample_gbm(sigma: float, times, rng: np.random.Generator) -> np.ndarray:
    """Exact GBM G(t) = exp(-sigma^2 t / 2 + sigma W(t)) on an increasing grid starting at 0."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValidationError("times must be strictly increasing and start at 0")
    d = np.diff(times)
    z = rng.standard_normal(d.size)
    logg = np.concatenate([[0.0], np.cumsum(-0.5 * sigma**2 * d + sigma * np.sqrt(d) * z)])
    return np.exp(logg)


def _block_multiplier(sigma: float, cfg: SimulationConfig, start: int, stop: int) -> np.ndarray:
    """G on the fine grid (K * m + 1 nodes) for paths start..stop-1.

    The first K normals of each stream fix W at the repricing times; extra
    normals fill substeps by Brownian bridge, so G(t_k) is the same for any
    substep count.
    """
    K, m, dt = cfg.n_steps, cfg.substeps, cfg.dt
    n = stop - start
    W = np.zeros((n, K * m + 1))
    coarse = np.empty((n, K))
    bridge = np.empty((n, K, m - 1)) if m > 1 else None
    for r, i in enumerate(range(start, stop)):
        rng = path_generator(cfg.seed, i)
        coarse[r] = rng.standard_normal(K)
        if m > 1:
            bridge[r] = rng.standard_normal((K, m - 1))
    Wc = np.concatenate([np.zeros((n, 1)), np.cumsum(np.sqrt(dt) * coarse, axis=1)], axis=1)
    W[:, ::m] = Wc
    if m > 1:
        h = dt / m
        for j in range(1, m):
            left = W[:, j - 1:-1:m][:, :K]
            right = Wc[:, 1:]
            rem = m - j + 1  # substeps left between node j-1 and the right end
            W[:, j::m][:, :K] = (left + (right - left) / rem
                                 + np.sqrt(h * (rem - 1) / rem) * bridge[:, :, j - 1])
    t = np.arange(K * m + 1) * (dt / m)
    return np.exp(-0.5 * sigma**2 * t + sigma * W)


@dataclass(frozen=True)
class PathRecord:
    times: np.ndarray
    stock: np.ndarray
    multiplier: np.ndarray
    estimate: np.ndarray
    prices: np.ndarray
    estimator_flags: np.ndarray
    hitting_time: float
    profit: float


@dataclass
class SimulationResult:
    config: SimulationConfig
    sigma: float
    profits: np.ndarray
    hitting_times: np.ndarray
    final_stock: np.ndarray
    stock: np.ndarray | None = None
    multiplier: np.ndarray | None = None
    estimate: np.ndarray | None = None
    prices: np.ndarray | None = None
    flags: np.ndarray | None = None

    def path(self, i: int) -> PathRecord:
        if self.stock is None:
            raise ValidationError("paths were not recorded; simulate with record=True")
        return PathRecord(self.config.times, self.stock[i], self.multiplier[i], self.estimate[i],
                          self.prices[i], self.flags[i], float(self.hitting_times[i]),
                          float(self.profits[i]))


# estimator flags, one per interval
FLAG_NONE = 0
FLAG_SELLOUT = 1
FLAG_CHOKE = 2


@dataclass(frozen=True)
class GEstimate:
    value: float
    flag: int = FLAG_NONE


def estimate_g(prev_price: float, prev_stock: float, stock: float, dt: float, demand,
               previous: float = 1.0) -> GEstimate:
    """G-hat = (S(t0) - S(t1)) / (q(a0) dt); sell-outs and choke prices keep the previous value."""
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if not prev_stock >= stock >= 0:
        raise ValidationError(f"need prev_stock >= stock >= 0, got {prev_stock}, {stock}")
    q = float(demand(prev_price))
    if q <= 0:
        return GEstimate(previous, FLAG_CHOKE)
    if stock == 0 and prev_stock > 0:
        return GEstimate(previous, FLAG_SELLOUT)
    return GEstimate((prev_stock - stock) / (q * dt))


def estimator_moments(sigma: float, dt: float, observed_drop: float, demand_at_price: float):
    """Conditional mean and variance of G given the observed drop over one interval."""
    mean = observed_drop / (demand_at_price * dt)
    return mean, mean**2 * math.expm1(sigma**2 * dt) / 4.0


def _simulate_block(spec: ProblemSpec, policy: Policy, cfg: SimulationConfig, G: np.ndarray,
                    offset: int, record: bool, record_prices: bool) -> dict:
    K, m, dt = cfg.n_steps, cfg.substeps, cfg.dt
    h = dt / m
    n = G.shape[0]
    demand = spec.demand
    a_max = demand.a_max
    S = np.full(n, float(cfg.initial_stock))
    Ghat = np.ones(n)
    revenue = np.zeros(n)
    T_h = np.where(S > 0, 1.0, 0.0)
    exact = cfg.estimator is EstimatorMode.EXACT
    if record:
        S_hist = np.empty((n, K + 1))
        Gh_hist = np.empty((n, K + 1))
        fl_hist = np.zeros((n, K + 1), dtype=np.int8)
        S_hist[:, 0] = S
        Gh_hist[:, 0] = Ghat
    if record or record_prices:
        a_hist = np.full((n, K + 1), np.nan)

    for k in range(K):
        t = k * dt
        g_in = G[:, k * m] if exact else Ghat
        a = np.broadcast_to(np.asarray(policy(t, S, g_in), dtype=float), (n,))
        bad = ~((a >= 0.0) & (a <= a_max))
        if bad.any():
            i = int(np.argmax(bad))
            raise PolicyPriceError(
                f"path {offset + i}: price {a[i]!r} outside [0, {a_max}] at t_k={t:.6g}")
        q = demand(a)
        Gf = G[:, k * m:(k + 1) * m + 1]
        dep = q[:, None] * np.cumsum(0.5 * h * (Gf[:, :-1] + Gf[:, 1:]), axis=1)
        total = dep[:, -1]
        alive = S > 0
        out = alive & (total >= S)
        sold = np.where(out, S, np.where(alive, total, 0.0))
        if out.any():
            idx = np.nonzero(out)[0]
            d = dep[idx]
            j = np.argmax(d >= S[idx, None], axis=1)
            prev = np.where(j > 0, d[np.arange(idx.size), j - 1], 0.0)
            frac = (S[idx] - prev) / (d[np.arange(idx.size), j] - prev)
            T_h[idx] = t + (j + frac) * h
        revenue += a * sold
        S_new = np.where(out, 0.0, np.maximum(S - sold, 0.0))

        informative = alive & ~out & (q > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            Ghat = np.where(informative, (S - S_new) / (q * dt), Ghat)
        S = S_new
        if record:
            S_hist[:, k + 1] = S
            Gh_hist[:, k + 1] = Ghat
            fl_hist[:, k + 1] = np.where(informative, FLAG_NONE,
                                         np.where(q > 0, FLAG_SELLOUT, FLAG_CHOKE))
        if record or record_prices:
            a_hist[:, k] = a

    res = {"profits": revenue - spec.C * S, "hitting_times": T_h, "final_stock": S}
    if record:
        res.update(stock=S_hist, multiplier=G[:, ::m].copy(), estimate=Gh_hist, flags=fl_hist)
    if record or record_prices:
        res["prices"] = a_hist
    return res


def _blocks(cfg: SimulationConfig):
    return [(s, min(s + cfg.block_size, cfg.n_paths)) for s in range(0, cfg.n_paths, cfg.block_size)]


def _run(spec: ProblemSpec, policies: Sequence[Policy], cfg: SimulationConfig,
         record: bool, record_prices: bool) -> list[SimulationResult]:
    blocks = _blocks(cfg)

    def work(block):
        start, stop = block
        G = _block_multiplier(spec.sigma, cfg, start, stop)
        return [_simulate_block(spec, p, cfg, G, start, record, record_prices) for p in policies]

    if cfg.threads == 1:
        parts = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            parts = list(ex.map(work, blocks))
    results = []
    for j in range(len(policies)):
        merged = {key: np.concatenate([part[j][key] for part in parts]) for key in parts[0][j]}
        results.append(SimulationResult(cfg, float(spec.sigma), **merged))
    return results


def simulate_policy(spec: ProblemSpec, policy: Policy, cfg: SimulationConfig,
                    record: bool = False, record_prices: bool = False) -> SimulationResult:
    """Simulate ``cfg.n_paths`` paths under ``policy(t, s, g)``.

    ``record`` keeps full per-path histories (S, G, G-hat, prices, flags);
    ``record_prices`` keeps only the price array.
    """
    return _run(spec, [policy], cfg, record, record_prices)[0]


def profit(path: PathRecord, spec: ProblemSpec) -> float:
    """Revenue sum a_k * sold_k minus C times leftover stock, recomputed from a recorded path."""
    sold = -np.diff(path.stock)
    return float(np.sum(path.prices[:-1] * sold) - spec.C * path.stock[-1])


@dataclass(frozen=True)
class ComparisonStats:
    """Statistics of 1 - P(A) / P(B) over paths driven by common random numbers."""

    sigma: float
    mean: float
    std: float
    median: float
    q05: float
    q50: float
    q95: float
    n: int
    n_excluded: int
    mean_profit_a: float
    std_profit_a: float
    mean_profit_b: float
    std_profit_b: float
    mean_gain: float  # E[P(B) - P(A)]
    stderr_gain: float
    relative: np.ndarray = field(repr=False, compare=False, default=None)

    def row(self) -> list[float]:
        return [self.sigma, self.mean, self.std, self.q05, self.q50, self.q95]


def comparison_stats(sigma: float, profits_a: np.ndarray, profits_b: np.ndarray) -> ComparisonStats:
    keep = profits_b != 0
    rel = 1.0 - profits_a[keep] / profits_b[keep]
    q05, q50, q95 = np.quantile(rel, [0.05, 0.5, 0.95]) if rel.size else (np.nan,) * 3
    gain = profits_b - profits_a
    n = profits_a.size
    return ComparisonStats(
        sigma=float(sigma),
        mean=float(np.mean(rel)) if rel.size else np.nan,
        std=float(np.std(rel, ddof=1)) if rel.size > 1 else 0.0,
        median=float(q50), q05=float(q05), q50=float(q50), q95=float(q95),
        n=int(rel.size), n_excluded=int(n - rel.size),
        mean_profit_a=float(np.mean(profits_a)),
        std_profit_a=float(np.std(profits_a, ddof=1)) if n > 1 else 0.0,
        mean_profit_b=float(np.mean(profits_b)),
        std_profit_b=float(np.std(profits_b, ddof=1)) if n > 1 else 0.0,
        mean_gain=float(np.mean(gain)),
        stderr_gain=float(np.std(gain, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        relative=rel,
    )


def compare_policies(spec: ProblemSpec, policy_a: Policy, policy_b: Policy, cfg: SimulationConfig,
                     record_prices: bool = False):
    """Run both policies on the same multiplier paths and summarize 1 - P(A)/P(B).

    With ``record_prices`` also returns the two SimulationResults.
    """
    ra, rb = _run(spec, [policy_a, policy_b], cfg, False, record_prices)
    stats = comparison_stats(spec.sigma, ra.profits, rb.profits)
    return (stats, ra, rb) if record_prices else stats


def negative_sales_probability(q_tilde: float, sigma_tilde: float, dt: float) -> float:
    """P(S(dt) > S(0)) = Phi(-sqrt(dt) q / sigma) under additive Brownian demand noise."""
    if not q_tilde > 0 or sigma_tilde < 0 or dt < 0:
        raise ValidationError("need q_tilde > 0, sigma_tilde >= 0, dt >= 0")
    if sigma_tilde == 0:
        return 0.0
    x = -math.sqrt(dt) * q_tilde / sigma_tilde
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def brownian_negative_sales_mc(q_tilde: float, sigma_tilde: float, dt: float, n_intervals: int,
                               seed: int = 0, substeps: int = 1) -> tuple[float, int]:
    """Simulate dS = -q dt + sigma dW over n_intervals intervals; return (fraction, count) of increases."""
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    h = dt / substeps
    dS = np.zeros(n_intervals)
    for _ in range(substeps):
        dS += -q_tilde * h + sigma_tilde * math.sqrt(h) * rng.standard_normal(n_intervals)
    count = int(np.count_nonzero(dS > 0))
    return count / n_intervals, count


# CSV output


def _csv(path, header: str, data: np.ndarray, provenance: str | None, fmt="%.17g") -> None:
    buf = io.StringIO()
    if provenance:
        buf.write(provenance.rstrip("\n") + "\n")
    buf.write(header + "\n")
    if data.size:
        np.savetxt(buf, data, delimiter=",", fmt=fmt)
    Path(path).write_text(buf.getvalue())


def write_paths_csv(result: SimulationResult, path, thin: int = 1, max_paths: int | None = None,
                    provenance: str | None = None) -> None:
    if result.stock is None:
        raise ValidationError("paths were not recorded; simulate with record=True")
    n = result.profits.size if max_paths is None else min(max_paths, result.profits.size)
    t = result.config.times
    cols = np.arange(0, t.size, thin)
    rows = []
    for i in range(n):
        rows.append(np.column_stack([np.full(cols.size, i), t[cols], result.stock[i, cols],
                                     result.multiplier[i, cols], result.estimate[i, cols],
                                     result.prices[i, cols]]))
    _csv(path, "path_id,t,S,G,Ghat,price", np.vstack(rows), provenance)


def write_stats_csv(rows: Sequence[Sequence[float]], path, provenance: str | None = None) -> None:
    """rows of (sigma, mean, std, q05, q50, q95)."""
    _csv(path, "sigma,mean,std,q05,q50,q95", np.asarray(rows, dtype=float).reshape(-1, 6), provenance)


def write_histogram_csv(values: np.ndarray, path, bins: int = 60, provenance: str | None = None) -> None:
    counts, edges = np.histogram(np.asarray(values), bins=bins)
    _csv(path, "bin_left,bin_right,count", np.column_stack([edges[:-1], edges[1:], counts]), provenance)


def price_quantiles(result: SimulationResult, qs=(0.05, 0.5, 0.95)) -> np.ndarray:
    """Per repricing time t_k: [t_k, quantiles of a_k over paths]."""
    if result.prices is None:
        raise ValidationError("prices were not recorded")
    p = result.prices[:, :-1]
    t = result.config.times[:-1]
    return np.column_stack([t, np.quantile(p, qs, axis=0).T])


def write_price_quantiles_csv(result: SimulationResult, path, qs=(0.05, 0.5, 0.95),
                              provenance: str | None = None) -> None:
    header = "t," + ",".join(f"q{round(100 * q):02d}" for q in qs)
    _csv(path, header, price_quantiles(result, qs), provenance)


def profit_stats_row(result: SimulationResult) -> list[float]:
    p = result.profits
    q05, q50, q95 = np.quantile(p, [0.05, 0.5, 0.95])
    std = float(np.std(p, ddof=1)) if p.size > 1 else 0.0
    return [result.sigma, float(np.mean(p)), std, float(q05), float(q50), float(q95)]
