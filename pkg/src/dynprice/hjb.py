"""Finite-difference solver for the stochastic HJB equation (linear demand).

Works in similarity coordinates ``tau = 1 - t``, ``xi = s / g`` with
``v(t, s, g) = g * phi(tau, xi)``::

    phi_tau = 1/2 sigma^2 xi^2 phi_xixi + max_{a in A} (a - phi_xi)(q1 - a)
    phi(0, xi) = -C xi,  phi(tau, 0) = 0,  phi(tau, xi_max) = -C xi_max + V(C) tau

The optimal price is ``psi = P_A[(q1 + phi_xi) / 2]`` and
``a^B(t, s, g) = psi(1 - t, s / g)``. Space is discretized with second-order
central differences; time with an adaptive Dormand-Prince 5(4) pair.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .demand import DemandModel, Family, ProblemSpec
from .deterministic import DeterministicPolicy
from .errors import (
    NonFiniteSolutionError,
    PreconditionError,
    SolverError,
    StepSizeUnderflowError,
    ValidationError,
)

_SNAP = 1e-12


def default_xi_max(spec: ProblemSpec) -> float:
    # the kink never passes beta; one extra beta keeps the Dirichlet far field
    # invisible (< 1e-6 in psi) up to sigma = 0.4, widened for larger sigma
    return spec.beta * max(2.0, 1.0 + 3.0 * spec.sigma)


@dataclass(frozen=True)
class SimilarityGrid:
    xi_max: float
    n_xi: int = 2001
    taus: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 101))

    def __post_init__(self):
        if not self.xi_max > 0:
            raise ValidationError(f"xi_max must be positive, got {self.xi_max}")
        if int(self.n_xi) != self.n_xi or self.n_xi < 3:
            raise ValidationError(f"n_xi must be an integer >= 3, got {self.n_xi}")
        taus = np.asarray(self.taus, dtype=float)
        if taus.ndim != 1 or taus.size < 2 or taus[0] != 0.0 or np.any(np.diff(taus) <= 0) or taus[-1] > 1.0:
            raise ValidationError("taus must be strictly increasing in [0, 1] and start at 0")
        taus.setflags(write=False)
        object.__setattr__(self, "n_xi", int(self.n_xi))
        object.__setattr__(self, "taus", taus)

    @classmethod
    def default(cls, spec: ProblemSpec, n_xi: int = 2001, n_tau: int = 101, xi_max: float | None = None):
        if xi_max is None:
            xi_max = default_xi_max(spec)
        return cls(xi_max, n_xi, np.linspace(0.0, 1.0, n_tau))

    @property
    def xi(self) -> np.ndarray:
        return np.linspace(0.0, self.xi_max, self.n_xi)

    @property
    def dxi(self) -> float:
        return self.xi_max / (self.n_xi - 1)


@dataclass(frozen=True)
class Tolerances:
    # steps are stability-bound, so tight tolerances are nearly free and keep
    # stiff-mode noise out of psi = (q1 + phi_xi) / 2
    rtol: float = 1e-12
    atol: float = 1e-14
    h0: float = 1e-6
    h_min: float = 1e-12
    max_steps: int = 50_000_000
    far_field: str = "dirichlet"

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.h0 > 0 and self.h_min > 0):
            raise ValidationError("rtol, atol, h0 and h_min must be positive")
        if self.far_field not in ("dirichlet", "neumann"):
            raise ValidationError(f"far_field must be 'dirichlet' or 'neumann', got {self.far_field!r}")


@dataclass(frozen=True)
class SolverReport:
    accepted: int
    rejected: int
    max_error_estimate: float
    projection_violations: int
    backend: str
    seconds: float


def _require_linear(spec: ProblemSpec):
    if spec.demand.family is not Family.LINEAR:
        raise PreconditionError("the stochastic HJB solver supports linear demand only")


def _integrate(kind, spec, grid, tol, y0, backend):
    kern = _kernels.get_kernels(backend)
    xi = grid.xi
    out = np.empty((grid.taus.size, grid.n_xi))
    far_rate = DeterministicPolicy(spec).flat_value_rate
    t0 = time.perf_counter()
    status, acc, rej, max_err, tau, n_stored = kern.dopri_integrate(
        kind, np.ascontiguousarray(y0, dtype=float), xi, np.ascontiguousarray(grid.taus),
        float(spec.sigma), float(spec.q1), float(spec.C), float(far_rate),
        int(tol.far_field == "neumann"), tol.rtol, tol.atol, tol.h0, tol.h_min,
        int(tol.max_steps), out,
    )
    elapsed = time.perf_counter() - t0
    if status == _kernels.STATUS_UNDERFLOW:
        raise StepSizeUnderflowError(tau, tol.h_min)
    if status == _kernels.STATUS_NONFINITE:
        last = n_stored - 1
        raise NonFiniteSolutionError(tau, float(grid.taus[last]), out[last].copy())
    if status == _kernels.STATUS_MAXSTEPS:
        raise SolverError(f"step budget of {tol.max_steps} exhausted at tau={tau:.6g}")
    name = "python" if kern is _kernels._pykernels else "cython"
    return out, (acc, rej, max_err, name, elapsed)


def psi_from_phi(phi: np.ndarray, dxi: float, q1: float):
    """Price (q1 + phi_xi) / 2 projected onto [0, q1], and the count of projected entries.

    Central differences inside, second-order one-sided at the far end;
    psi(tau, 0) = q1 is boundary data.
    """
    phi = np.atleast_2d(phi)
    d = np.empty_like(phi)
    d[:, 1:-1] = (phi[:, 2:] - phi[:, :-2]) / (2 * dxi)
    d[:, -1] = (3 * phi[:, -1] - 4 * phi[:, -2] + phi[:, -3]) / (2 * dxi)
    d[:, 0] = q1
    raw = 0.5 * (q1 + d)
    violations = int(np.count_nonzero((raw < -1e-12) | (raw > q1 + 1e-12)))
    return np.clip(raw, 0.0, q1), violations


@dataclass(frozen=True)
class HjbSolution:
    """Grid solution (phi, psi) at every checkpoint; callable as a pricing policy."""

    spec: ProblemSpec
    grid: SimilarityGrid
    phi: np.ndarray
    psi: np.ndarray
    report: SolverReport | None = None

    @property
    def delta(self) -> float:
        return self.spec.delta

    def _tau_weights(self, tau):
        taus = self.grid.taus
        j0 = np.clip(np.searchsorted(taus, tau, side="right") - 1, 0, taus.size - 2)
        w = (tau - taus[j0]) / (taus[j0 + 1] - taus[j0])
        w = np.where(np.abs(tau - taus[j0]) <= _SNAP, 0.0, w)
        w = np.where(np.abs(tau - taus[j0 + 1]) <= _SNAP, 1.0, w)
        return j0, np.clip(w, 0.0, 1.0)

    def _interp(self, table, tau, xi):
        dxi = self.grid.dxi
        n = self.grid.n_xi
        j0, w = self._tau_weights(tau)
        pos = np.clip(xi, 0.0, self.grid.xi_max) / dxi
        # queries at grid nodes reproduce stored values exactly
        near = np.rint(pos)
        pos = np.where(np.abs(pos - near) <= 1e-9, near, pos)
        i0 = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
        f = pos - i0
        lo = (1 - f) * table[j0, i0] + f * table[j0, i0 + 1]
        hi = (1 - f) * table[j0 + 1, i0] + f * table[j0 + 1, i0 + 1]
        return (1 - w) * lo + w * hi

    def price(self, t, s, g=1.0):
        t, s, g = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, s, g)))
        if np.any(t >= 1.0) or np.any(t < 0.0):
            raise PreconditionError("no pricing decision at t >= 1 (or t < 0)")
        tau = 1.0 - t
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = np.where(g > 0, s / np.where(g > 0, g, 1.0), np.inf)
        inside = xi <= self.grid.xi_max
        val = self._interp(self.psi, tau, np.where(inside, xi, 0.0))
        out = self.spec.demand.project(np.where(inside, val, self.delta))
        return float(out) if np.ndim(out) == 0 else out

    __call__ = price

    def value(self, t, s, g=1.0):
        """g * phi(1 - t, s / g); the deterministic far field beyond xi_max."""
        t, s, g = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, s, g)))
        tau = 1.0 - t
        xi = s / g
        inside = xi <= self.grid.xi_max
        far = -self.spec.C * xi + DeterministicPolicy(self.spec).flat_value_rate * tau
        val = np.where(inside, self._interp(self.phi, tau, np.where(inside, xi, 0.0)), far)
        out = g * val
        return float(out) if np.ndim(out) == 0 else out

    def checkpoint(self, tau: float) -> int:
        j = int(np.argmin(np.abs(self.grid.taus - tau)))
        if abs(self.grid.taus[j] - tau) > _SNAP:
            raise PreconditionError(f"tau={tau} is not a stored checkpoint")
        return j

    def to_csv(self, path, provenance: str | None = None) -> None:
        write_solution_csv(self, path, provenance)


def solve_value_pde(spec: ProblemSpec, grid: SimilarityGrid | None = None,
                    tol: Tolerances | None = None, backend: str | None = None) -> HjbSolution:
    _require_linear(spec)
    grid = grid or SimilarityGrid.default(spec)
    tol = tol or Tolerances()
    phi0 = -spec.C * grid.xi
    phi, (acc, rej, max_err, name, elapsed) = _integrate(_kernels.VALUE_PDE, spec, grid, tol, phi0, backend)
    psi, violations = psi_from_phi(phi, grid.dxi, spec.q1)
    report = SolverReport(acc, rej, max_err, violations, name, elapsed)
    phi.setflags(write=False)
    psi.setflags(write=False)
    return HjbSolution(spec, grid, phi, psi, report)


def solve_price_pde(spec: ProblemSpec, grid: SimilarityGrid | None = None,
                    tol: Tolerances | None = None, backend: str | None = None) -> np.ndarray:
    """Integrate the price PDE directly; psi(0, 0) = q1, psi(0, xi > 0) = delta."""
    _require_linear(spec)
    grid = grid or SimilarityGrid.default(spec)
    tol = tol or Tolerances()
    psi0 = np.full(grid.n_xi, spec.delta)
    psi0[0] = spec.q1
    psi, _ = _integrate(_kernels.PRICE_PDE, spec, grid, tol, psi0, backend)
    return psi


def _spec_to_dict(spec: ProblemSpec) -> dict:
    return {"family": spec.demand.family.value, "q1": spec.q1, "a_max": spec.demand.a_max,
            "C": spec.C, "sigma": spec.sigma}


def _spec_from_dict(d: dict) -> ProblemSpec:
    fam = Family(d["family"])
    model = DemandModel(fam, d["q1"], None if fam is Family.LINEAR else d["a_max"])
    return ProblemSpec(model, d["C"], d["sigma"])


def write_solution_csv(sol: HjbSolution, path, provenance: str | None = None) -> None:
    n_tau, n_xi = sol.phi.shape
    tau = np.repeat(sol.grid.taus, n_xi)
    xi = np.tile(sol.grid.xi, n_tau)
    data = np.column_stack([tau, xi, sol.phi.ravel(), sol.psi.ravel()])
    buf = io.StringIO()
    if provenance:
        buf.write(provenance.rstrip("\n") + "\n")
    buf.write("# spec " + json.dumps(_spec_to_dict(sol.spec), sort_keys=True) + "\n")
    buf.write("tau,xi,phi,psi\n")
    np.savetxt(buf, data, delimiter=",", fmt="%.17g")
    Path(path).write_text(buf.getvalue())


def read_solution_csv(path, spec: ProblemSpec | None = None) -> HjbSolution:
    lines = Path(path).read_text().splitlines()
    meta = None
    body = []
    for line in lines:
        if line.startswith("# spec "):
            meta = json.loads(line[len("# spec "):])
        elif line.startswith("#") or line.startswith("tau,"):
            continue
        elif line:
            body.append(line)
    if spec is None:
        if meta is None:
            raise ValidationError(f"{path}: no '# spec' line and no spec given")
        spec = _spec_from_dict(meta)
    data = np.loadtxt(body, delimiter=",", ndmin=2)
    taus = np.unique(data[:, 0])
    xi = data[: data.shape[0] // taus.size, 1]
    shape = (taus.size, xi.size)
    grid = SimilarityGrid(float(xi[-1]), xi.size, taus)
    phi = data[:, 2].reshape(shape)
    psi = data[:, 3].reshape(shape)
    return HjbSolution(spec, grid, phi, psi)
