"""Leading-order inner-layer and outer corrections to the stochastic price.

Near the kink ``xi = beta tau`` the price behaves like

    psi(tau, xi) ~ delta + sigma sqrt(tau) f((xi - beta tau) / (sigma tau^{3/2}))

where f solves the two-point problem

    beta^2 f'' + (3 eta + 2 f) f' - f = 0,   f(+inf) = 0,   f'(-inf) = -1.

Left of the layer the price picks up a second-order shift ``-sigma^2 xi / 2``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .demand import Family, ProblemSpec
from .deterministic import DeterministicPolicy
from .errors import ConvergenceError, PreconditionError, ValidationError


@dataclass(frozen=True)
class InnerLayerSolution:
    beta: float
    eta: np.ndarray
    f: np.ndarray
    fprime: np.ndarray
    residual: float
    iterations: int
    delta: float | None = None

    @property
    def L(self) -> float:
        return float(self.eta[-1])

    def __call__(self, eta):
        """f(eta), extended by 0 on the right and slope -1 on the left."""
        eta = np.asarray(eta, dtype=float)
        out = np.interp(eta, self.eta, self.f)
        left = eta < self.eta[0]
        out = np.where(left, self.f[0] - (eta - self.eta[0]), out)
        out = np.where(eta > self.eta[-1], 0.0, out)
        return float(out) if out.ndim == 0 else out

    @property
    def f0(self) -> float:
        return float(self(0.0))

    def to_csv(self, path, provenance: str | None = None) -> None:
        buf = io.StringIO()
        if provenance:
            buf.write(provenance.rstrip("\n") + "\n")
        buf.write("eta,f,fprime\n")
        np.savetxt(buf, np.column_stack([self.eta, self.f, self.fprime]), delimiter=",", fmt="%.17g")
        Path(path).write_text(buf.getvalue())


def ode_residual(f: np.ndarray, eta: np.ndarray, beta: float) -> np.ndarray:
    """Discrete residual, including the two boundary rows."""
    h = eta[1] - eta[0]
    r = np.empty_like(f)
    d1 = (f[2:] - f[:-2]) / (2 * h)
    d2 = (f[2:] - 2 * f[1:-1] + f[:-2]) / (h * h)
    r[1:-1] = beta**2 * d2 + (3 * eta[1:-1] + 2 * f[1:-1]) * d1 - f[1:-1]
    r[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h) + 1.0
    r[-1] = f[-1]
    return r


def _jacobian_banded(f, eta, beta):
    # band storage for solve_banded((1, 2), ...): ab[2 + i - j, j] = J[i, j]
    n = f.size
    h = eta[1] - eta[0]
    ab = np.zeros((4, n))
    b = 3 * eta[1:-1] + 2 * f[1:-1]
    d1 = (f[2:] - f[:-2]) / (2 * h)
    i = np.arange(1, n - 1)
    ab[3, i - 1] = beta**2 / h**2 - b / (2 * h)       # J[i, i-1]
    ab[2, i] = -2 * beta**2 / h**2 + 2 * d1 - 1.0     # J[i, i]
    ab[1, i + 1] = beta**2 / h**2 + b / (2 * h)       # J[i, i+1]
    ab[2, 0] = -3 / (2 * h)
    ab[1, 1] = 4 / (2 * h)
    ab[0, 2] = -1 / (2 * h)
    ab[2, n - 1] = 1.0
    return ab


def solve_inner_ode(beta: float, L: float = 10.0, n_nodes: int = 2001,
                    tol: float = 1e-9, max_iter: int = 100,
                    delta: float | None = None) -> InnerLayerSolution:
    """Damped Newton on the central-difference discretization, from max(0, -eta)."""
    if not beta > 0:
        raise ValidationError(f"beta must be positive, got {beta}")
    if not (L > 0 and n_nodes >= 5):
        raise ValidationError("need L > 0 and at least 5 nodes")
    eta = np.linspace(-L, L, n_nodes)
    f = np.maximum(0.0, -eta)
    r = ode_residual(f, eta, beta)
    norm = np.abs(r).max()
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise ConvergenceError(it, norm)
        step = solve_banded((1, 2), _jacobian_banded(f, eta, beta), -r)
        lam = 1.0
        while True:
            trial = f + lam * step
            r_trial = ode_residual(trial, eta, beta)
            n_trial = np.abs(r_trial).max()
            if n_trial <= (1 - 0.5 * lam) * norm or lam < 1e-3:
                break
            lam *= 0.5
        f, r, norm = trial, r_trial, n_trial
        it += 1
    h = eta[1] - eta[0]
    fp = np.gradient(f, h, edge_order=2)
    return InnerLayerSolution(float(beta), eta, f, fp, float(norm), it, delta)


def _stochastic_linear(spec: ProblemSpec):
    if spec.demand.family is not Family.LINEAR:
        raise PreconditionError("asymptotic corrections are derived for linear demand")
    if not spec.sigma > 0:
        raise PreconditionError("inner-layer approximation needs sigma > 0")


def inner_eta(spec: ProblemSpec, t, s, g=1.0):
    tau = 1.0 - np.asarray(t, dtype=float)
    xi = np.asarray(s, dtype=float) / np.asarray(g, dtype=float)
    return (xi - spec.beta * tau) / (spec.sigma * tau**1.5)


def inner_price_approx(sol: InnerLayerSolution, spec: ProblemSpec, t, s, g=1.0):
    """delta + sigma sqrt(tau) f(eta): the leading-order price near the kink."""
    _stochastic_linear(spec)
    tau = 1.0 - np.asarray(t, dtype=float)
    if np.any(tau <= 0):
        raise PreconditionError("inner approximation needs t < 1")
    eta = inner_eta(spec, t, s, g)
    out = spec.delta + spec.sigma * np.sqrt(tau) * sol(eta)
    return float(out) if np.ndim(out) == 0 else out


def outer_correction(spec: ProblemSpec, t, s, g=1.0):
    """a^D - sigma^2 xi / 2, valid in the sell-out region xi < beta (1 - t)."""
    if spec.demand.family is not Family.LINEAR:
        raise PreconditionError("asymptotic corrections are derived for linear demand")
    t, s, g = (np.asarray(v, dtype=float) for v in (t, s, g))
    xi = s / g
    if np.any(xi >= spec.beta * (1.0 - t)):
        raise PreconditionError("outer correction applies only for xi < beta (1 - t)")
    out = DeterministicPolicy(spec).price(t, s, g) - 0.5 * spec.sigma**2 * xi
    return float(out) if np.ndim(out) == 0 else out


def layer_eta_interval(sol: InnerLayerSolution, threshold: float = 0.05) -> tuple[float, float]:
    """eta-range where f departs from the outer branches max(0, -eta) by more than threshold."""
    gap = np.abs(sol.f - np.maximum(0.0, -sol.eta))
    idx = np.nonzero(gap > threshold)[0]
    if idx.size == 0:
        return 0.0, 0.0
    return float(sol.eta[idx[0]]), float(sol.eta[idx[-1]])


def layer_xi_width(sol: InnerLayerSolution, sigma: float, tau: float, threshold: float = 0.05) -> float:
    lo, hi = layer_eta_interval(sol, threshold)
    return (hi - lo) * sigma * tau**1.5
