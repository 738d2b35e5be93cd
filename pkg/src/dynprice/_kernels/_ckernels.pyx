# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled HJB method-of-lines integrator (same algorithm as _pykernels)."""

from libc.math cimport sqrt, fabs, pow, isfinite
import numpy as np

cdef enum:
    VALUE_PDE = 0
    PRICE_PDE = 1

cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double A71 = 35.0 / 384, A73 = 500.0 / 1113, A74 = 125.0 / 192, A75 = -2187.0 / 6784, A76 = 11.0 / 84
cdef double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920, E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40

cdef double SAFE = 0.9
cdef double BETA = 0.04
cdef double EXPO1 = 0.2 - 0.04 * 0.75
cdef double FACC1 = 5.0
cdef double FACC2 = 0.1


cdef inline double clip(double a, double lo, double hi) nogil:
    if a < lo:
        return lo
    if a > hi:
        return hi
    return a


cdef void _rhs(int kind, const double* y, const double* xi, Py_ssize_t n, double dxi,
               double sigma, double q1, double C, double far_rate, int neumann,
               double* out) noexcept nogil:
    cdef double inv2h = 0.5 / dxi
    cdef double invh2 = 1.0 / (dxi * dxi)
    cdef double half_s2 = 0.5 * sigma * sigma
    cdef double d1, d2, a, x, yg
    cdef Py_ssize_t i
    if kind == VALUE_PDE:
        for i in range(1, n - 1):
            d1 = (y[i + 1] - y[i - 1]) * inv2h
            d2 = (y[i + 1] - 2.0 * y[i] + y[i - 1]) * invh2
            a = clip(0.5 * (q1 + d1), 0.0, q1)
            x = xi[i]
            out[i] = half_s2 * x * x * d2 + (a - d1) * (q1 - a)
        out[0] = 0.0
        if neumann:
            x = xi[n - 1]
            yg = y[n - 2] - 2.0 * dxi * C
            d1 = (yg - y[n - 2]) * inv2h
            d2 = (yg - 2.0 * y[n - 1] + y[n - 2]) * invh2
            a = clip(0.5 * (q1 + d1), 0.0, q1)
            out[n - 1] = half_s2 * x * x * d2 + (a - d1) * (q1 - a)
        else:
            out[n - 1] = far_rate
    else:
        for i in range(1, n - 1):
            d1 = (y[i + 1] - y[i - 1]) * inv2h
            d2 = (y[i + 1] - 2.0 * y[i] + y[i - 1]) * invh2
            x = xi[i]
            out[i] = half_s2 * x * x * d2 + (2.0 * half_s2 * x - q1 + y[i]) * d1
        out[0] = 0.0
        out[n - 1] = 0.0


def rhs(int kind, const double[::1] y, const double[::1] xi, double dxi, double sigma, double q1,
        double C, double far_rate, int neumann, double[::1] out):
    _rhs(kind, &y[0], &xi[0], y.shape[0], dxi, sigma, q1, C, far_rate, neumann, &out[0])
    return np.asarray(out)


def dopri_integrate(int kind, const double[::1] y0, const double[::1] xi, const double[::1] taus,
                    double sigma, double q1, double C, double far_rate, int neumann,
                    double rtol, double atol, double h0, double hmin, long max_steps,
                    double[:, ::1] out):
    cdef Py_ssize_t n = y0.shape[0]
    cdef Py_ssize_t n_ckpt = taus.shape[0]
    cdef double dxi = xi[1] - xi[0]
    work = np.empty((10, n), dtype=np.float64)
    cdef double[:, ::1] w = work
    cdef double* y = &w[0, 0]
    cdef double* ynew = &w[1, 0]
    cdef double* ytmp = &w[2, 0]
    cdef double* k1 = &w[3, 0]
    cdef double* k2 = &w[4, 0]
    cdef double* k3 = &w[5, 0]
    cdef double* k4 = &w[6, 0]
    cdef double* k5 = &w[7, 0]
    cdef double* k6 = &w[8, 0]
    cdef double* k7 = &w[9, 0]
    cdef double* swap
    cdef const double* xp = &xi[0]
    cdef Py_ssize_t i, j = 1, n_stored = 1
    cdef long accepted = 0, rejected = 0
    cdef double tau = taus[0], h = h0, hstep, hnew, target, err, fac, fac11, sk, e
    cdef double facold = 1e-4, max_err = 0.0
    cdef bint last, finite_y

    for i in range(n):
        y[i] = y0[i]
        out[0, i] = y0[i]

    with nogil:
        _rhs(kind, y, xp, n, dxi, sigma, q1, C, far_rate, neumann, k1)
        while j < n_ckpt:
            target = taus[j]
            if accepted + rejected >= max_steps:
                with gil:
                    return 3, accepted, rejected, max_err, tau, n_stored
            last = False
            hstep = h
            if tau + hstep >= target - 1e-14 * (fabs(target) if fabs(target) > 1.0 else 1.0):
                hstep = target - tau
                last = True
            if hstep < hmin and not last:
                with gil:
                    return 1, accepted, rejected, max_err, tau, n_stored

            for i in range(n):
                ytmp[i] = y[i] + hstep * A21 * k1[i]
            _rhs(kind, ytmp, xp, n, dxi, sigma, q1, C, far_rate, neumann, k2)
            for i in range(n):
                ytmp[i] = y[i] + hstep * (A31 * k1[i] + A32 * k2[i])
            _rhs(kind, ytmp, xp, n, dxi, sigma, q1, C, far_rate, neumann, k3)
            for i in range(n):
                ytmp[i] = y[i] + hstep * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
            _rhs(kind, ytmp, xp, n, dxi, sigma, q1, C, far_rate, neumann, k4)
            for i in range(n):
                ytmp[i] = y[i] + hstep * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
            _rhs(kind, ytmp, xp, n, dxi, sigma, q1, C, far_rate, neumann, k5)
            for i in range(n):
                ytmp[i] = y[i] + hstep * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
            _rhs(kind, ytmp, xp, n, dxi, sigma, q1, C, far_rate, neumann, k6)
            for i in range(n):
                ynew[i] = y[i] + hstep * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i])
            _rhs(kind, ynew, xp, n, dxi, sigma, q1, C, far_rate, neumann, k7)
            err = 0.0
            for i in range(n):
                e = hstep * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
                sk = atol + rtol * (fabs(y[i]) if fabs(y[i]) > fabs(ynew[i]) else fabs(ynew[i]))
                err += (e / sk) * (e / sk)
            err = sqrt(err / n)

            if not isfinite(err):
                finite_y = True
                for i in range(n):
                    if not isfinite(y[i]):
                        finite_y = False
                        break
                if not finite_y:
                    with gil:
                        return 2, accepted, rejected, max_err, tau, n_stored
                rejected += 1
                h = 0.1 * hstep
                if h < hmin:
                    with gil:
                        return 2, accepted, rejected, max_err, tau, n_stored
                continue

            fac11 = pow(err, EXPO1)
            if err <= 1.0:
                fac = fac11 / pow(facold, BETA)
                fac = fac / SAFE
                if fac > FACC1:
                    fac = FACC1
                if fac < FACC2:
                    fac = FACC2
                hnew = hstep / fac
                facold = err if err > 1e-4 else 1e-4
                accepted += 1
                if err > max_err:
                    max_err = err
                swap = y
                y = ynew
                ynew = swap
                swap = k1
                k1 = k7
                k7 = swap
                if last:
                    tau = target
                    for i in range(n):
                        out[j, i] = y[i]
                    n_stored += 1
                    j += 1
                    if hstep < h:
                        if hnew > h:
                            h = hnew
                    else:
                        h = hnew
                else:
                    tau += hstep
                    h = hnew
            else:
                rejected += 1
                fac = fac11 / SAFE
                if fac > FACC1:
                    fac = FACC1
                h = hstep / fac
                if h < hmin:
                    with gil:
                        return 1, accepted, rejected, max_err, tau, n_stored
    return 0, accepted, rejected, max_err, tau, n_stored
