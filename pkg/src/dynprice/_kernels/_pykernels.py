"""Pure numpy implementation of the HJB method-of-lines integrator.

Mirrors ``_ckernels.pyx`` step for step; used when the compiled module is
unavailable or ``DYNPRICE_KERNELS=python``.
"""

import math

import numpy as np

VALUE_PDE = 0
PRICE_PDE = 1

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_NONFINITE = 2
STATUS_MAXSTEPS = 3

# Dormand-Prince 5(4)
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
A71, A73, A74, A75, A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40

SAFE = 0.9
BETA = 0.04
EXPO1 = 0.2 - BETA * 0.75
FACC1 = 5.0  # 1 / min growth factor 0.2
FACC2 = 0.1  # 1 / max growth factor 10


def rhs(kind, y, xi, dxi, sigma, q1, C, far_rate, neumann, out):
    """Semi-discrete right-hand side on a uniform grid.

    Value PDE:  phi_tau = 1/2 sigma^2 xi^2 phi_xixi + H(phi_xi)
    Price PDE:  psi_tau = 1/2 sigma^2 xi^2 psi_xixi + (sigma^2 xi - q1 + psi) psi_xi
    """
    n = y.shape[0]
    inv2h = 0.5 / dxi
    invh2 = 1.0 / (dxi * dxi)
    half_s2 = 0.5 * sigma * sigma
    ym, y0, yp, x = y[:-2], y[1:-1], y[2:], xi[1:-1]
    d1 = (yp - ym) * inv2h
    d2 = (yp - 2.0 * y0 + ym) * invh2
    if kind == VALUE_PDE:
        a = np.clip(0.5 * (q1 + d1), 0.0, q1)
        out[1:-1] = half_s2 * x * x * d2 + (a - d1) * (q1 - a)
        out[0] = 0.0
        if neumann:
            # ghost node from phi_xi = -C at the far boundary
            xl = xi[n - 1]
            yg = y[n - 2] - 2.0 * dxi * C
            p = (yg - y[n - 2]) * inv2h
            pp = (yg - 2.0 * y[n - 1] + y[n - 2]) * invh2
            al = min(max(0.5 * (q1 + p), 0.0), q1)
            out[n - 1] = half_s2 * xl * xl * pp + (al - p) * (q1 - al)
        else:
            out[n - 1] = far_rate
    else:
        out[1:-1] = half_s2 * x * x * d2 + (2.0 * half_s2 * x - q1 + y0) * d1
        out[0] = 0.0
        out[n - 1] = 0.0
    return out


def dopri_integrate(kind, y0, xi, taus, sigma, q1, C, far_rate, neumann,
                    rtol, atol, h0, hmin, max_steps, out):
    """Adaptive Dormand-Prince integration from taus[0], storing y at every tau.

    ``out[0]`` receives ``y0``. Returns
    ``(status, accepted, rejected, max_err, tau_reached, n_stored)``.
    """
    y = np.array(y0, dtype=float)
    n = y.shape[0]
    dxi = xi[1] - xi[0]
    k1, k2, k3, k4, k5, k6, k7 = (np.empty(n) for _ in range(7))
    ytmp = np.empty(n)
    ynew = np.empty(n)
    args = (xi, dxi, sigma, q1, C, far_rate, neumann)

    out[0, :] = y
    n_stored = 1
    tau = float(taus[0])
    h = float(h0)
    facold = 1e-4
    accepted = rejected = 0
    max_err = 0.0
    rhs(kind, y, *args, k1)
    n_ckpt = taus.shape[0]
    j = 1
    while j < n_ckpt:
        target = float(taus[j])
        if accepted + rejected >= max_steps:
            return STATUS_MAXSTEPS, accepted, rejected, max_err, tau, n_stored
        last = False
        hstep = h
        if tau + hstep >= target - 1e-14 * max(1.0, abs(target)):
            hstep = target - tau
            last = True
        if hstep < hmin and not last:
            return STATUS_UNDERFLOW, accepted, rejected, max_err, tau, n_stored

        np.add(y, hstep * A21 * k1, out=ytmp)
        rhs(kind, ytmp, *args, k2)
        np.add(y, hstep * (A31 * k1 + A32 * k2), out=ytmp)
        rhs(kind, ytmp, *args, k3)
        np.add(y, hstep * (A41 * k1 + A42 * k2 + A43 * k3), out=ytmp)
        rhs(kind, ytmp, *args, k4)
        np.add(y, hstep * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4), out=ytmp)
        rhs(kind, ytmp, *args, k5)
        np.add(y, hstep * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5), out=ytmp)
        rhs(kind, ytmp, *args, k6)
        np.add(y, hstep * (A71 * k1 + A73 * k3 + A74 * k4 + A75 * k5 + A76 * k6), out=ynew)
        rhs(kind, ynew, *args, k7)
        errv = hstep * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        sk = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        err = math.sqrt(float(np.sum((errv / sk) ** 2)) / n)

        if not math.isfinite(err):
            if not np.all(np.isfinite(y)):
                return STATUS_NONFINITE, accepted, rejected, max_err, tau, n_stored
            # treat as a failed step; the stage values blew up
            rejected += 1
            h = 0.1 * hstep
            if h < hmin:
                return STATUS_NONFINITE, accepted, rejected, max_err, tau, n_stored
            continue

        fac11 = err ** EXPO1
        if err <= 1.0:
            fac = fac11 / facold ** BETA
            fac = max(FACC2, min(FACC1, fac / SAFE))
            hnew = hstep / fac
            facold = max(err, 1e-4)
            accepted += 1
            max_err = max(max_err, err)
            y, ynew = ynew, y
            k1, k7 = k7, k1
            if last:
                tau = target
                out[j, :] = y
                n_stored += 1
                j += 1
                # a step clipped to hit the checkpoint says little about stability
                h = max(h, hnew) if hstep < h else hnew
            else:
                tau += hstep
                h = hnew
        else:
            rejected += 1
            h = hstep / min(FACC1, fac11 / SAFE)
            if h < hmin:
                return STATUS_UNDERFLOW, accepted, rejected, max_err, tau, n_stored
    return STATUS_OK, accepted, rejected, max_err, tau, n_stored
