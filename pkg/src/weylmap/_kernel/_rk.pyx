# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled layer integrator (Dormand-Prince 5(4), complex states).

Mirror of ``_rk_py.py``; see that module for the algorithm notes.  The two
implementations follow the same arithmetic step for step so their results
agree to roundoff.
"""

import numpy as np

cimport cython
from libc.math cimport fabs, sqrt, fmax, fmin, hypot, INFINITY

BACKEND_NAME = "cython"

ctypedef double complex cplx

cdef double _C2 = 0.2, _C3 = 0.3, _C4 = 0.8, _C5 = 8.0 / 9.0
cdef double _A21 = 0.2
cdef double _A31 = 3.0 / 40.0, _A32 = 9.0 / 40.0
cdef double _A41 = 44.0 / 45.0, _A42 = -56.0 / 15.0, _A43 = 32.0 / 9.0
cdef double _A51 = 19372.0 / 6561.0, _A52 = -25360.0 / 2187.0
cdef double _A53 = 64448.0 / 6561.0, _A54 = -212.0 / 729.0
cdef double _A61 = 9017.0 / 3168.0, _A62 = -355.0 / 33.0, _A63 = 46732.0 / 5247.0
cdef double _A64 = 49.0 / 176.0, _A65 = -5103.0 / 18656.0
cdef double _B1 = 35.0 / 384.0, _B3 = 500.0 / 1113.0, _B4 = 125.0 / 192.0
cdef double _B5 = -2187.0 / 6784.0, _B6 = 11.0 / 84.0
cdef double _E1 = 71.0 / 57600.0, _E3 = -71.0 / 16695.0, _E4 = 71.0 / 1920.0
cdef double _E5 = -17253.0 / 339200.0, _E6 = 22.0 / 525.0, _E7 = -1.0 / 40.0

cdef double _EPS16 = 16.0 * 2.220446049250313e-16


cdef inline double _cabs(cplx z) nogil:
    # hypot avoids overflow: solution magnitudes reach exp(500) for
    # high-index branch eigenvalues
    return hypot(z.real, z.imag)


cdef inline void _rhs(double x, cplx *y, cplx *f, cplx lam, cplx lam2, cplx rcoef,
                      const cplx *q_vals, double q_step, Py_ssize_t nq, int mode) nogil:
    cdef double t = x / q_step
    cdef Py_ssize_t i = <Py_ssize_t>t
    cdef double frac
    cdef cplx q, w, w2
    if i < 0:
        i = 0
    elif i > nq - 2:
        i = nq - 2
    frac = t - i
    q = q_vals[i] * (1.0 - frac) + q_vals[i + 1] * frac
    w = q - lam * rcoef
    f[0] = y[1]
    f[1] = w * y[0]
    if mode == 1:
        f[2] = y[3]
        f[3] = w * y[2] - rcoef * y[0]
    elif mode == 2:
        w2 = q - lam2 * rcoef
        f[2] = y[3]
        f[3] = w2 * y[2]
        f[4] = rcoef * y[0] * y[2]


def integrate_layer(y0, double x0, double x1, lam_in, lam2_in, rcoef_in,
                    const cplx[::1] q_vals, double q_step, double rtol, double atol,
                    const double[::1] x_out, cplx[:, ::1] out, int mode):
    """Same contract as the Python fallback's ``integrate_layer``."""
    cdef cplx lam = lam_in
    cdef cplx lam2 = lam2_in
    cdef cplx rcoef = rcoef_in
    cdef int n = 2 if mode == 0 else (4 if mode == 1 else 5)
    cdef Py_ssize_t nq = q_vals.shape[0]
    cdef double span = x1 - x0
    cdef Py_ssize_t nout = x_out.shape[0]
    cdef cplx y[5]
    cdef cplx f1[5]
    cdef cplx f2[5]
    cdef cplx f3[5]
    cdef cplx f4[5]
    cdef cplx f5[5]
    cdef cplx f6[5]
    cdef cplx f7[5]
    cdef cplx ytmp[5]
    cdef cplx ynew[5]
    cdef cplx e
    cdef Py_ssize_t j, m, iout, hit
    cdef double direction, d0, d1, d2, dm, h0, h1, h_prop, x, hmin, h, hs
    cdef double err, sk, ay, an, fac, x_new, ymax, flr, mg
    cdef long steps = 0, max_steps = 10_000_000
    cdef bint clamped, finite
    cdef int status = 0

    for j in range(n):
        y[j] = y0[j]

    if span == 0.0:
        for m in range(nout):
            for j in range(n):
                out[m, j] = y[j]
        return 0, np.array([y[j] for j in range(n)])

    direction = 1.0 if span > 0.0 else -1.0

    _rhs(x0, y, f1, lam, lam2, rcoef, &q_vals[0], q_step, nq, mode)

    ymax = 0.0
    for j in range(n):
        if _cabs(y[j]) > ymax:
            ymax = _cabs(y[j])
    if ymax == 0.0:
        ymax = 1.0
    d0 = 0.0
    d1 = 0.0
    for j in range(n):
        sk = atol + rtol * fmax(_cabs(y[j]), 0.01 * ymax)
        d0 += (_cabs(y[j]) / sk) ** 2
        d1 += (_cabs(f1[j]) / sk) ** 2
    d0 = sqrt(d0 / n)
    d1 = sqrt(d1 / n)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = fmin(h0, fabs(span))
    for j in range(n):
        ytmp[j] = y[j] + direction * h0 * f1[j]
    _rhs(x0 + direction * h0, ytmp, f2, lam, lam2, rcoef, &q_vals[0], q_step, nq, mode)
    d2 = 0.0
    for j in range(n):
        sk = atol + rtol * fmax(_cabs(y[j]), 0.01 * ymax)
        d2 += (_cabs(f2[j] - f1[j]) / sk) ** 2
    d2 = sqrt(d2 / n) / h0
    dm = fmax(d1, d2)
    h1 = fmax(1e-6, h0 * 1e-3) if dm <= 1e-15 else (0.01 / dm) ** 0.2
    h_prop = fmin(fmin(100.0 * h0, h1), fabs(span))

    x = x0
    iout = 0
    hmin = _EPS16 * fmax(fabs(x0), fabs(x1))

    while direction * (x1 - x) > hmin:
        steps += 1
        if steps > max_steps:
            status = 1
            break
        h = h_prop
        clamped = False
        hit = -1
        if h > direction * (x1 - x):
            h = direction * (x1 - x)
            clamped = True
        if iout < nout and h >= direction * (x_out[iout] - x):
            h = direction * (x_out[iout] - x)
            clamped = True
            hit = iout
        if h < hmin:
            if hit >= 0:
                for j in range(n):
                    out[hit, j] = y[j]
                iout += 1
                continue
            status = 1
            break

        hs = direction * h

        for j in range(n):
            ytmp[j] = y[j] + hs * _A21 * f1[j]
        _rhs(x + _C2 * hs, ytmp, f2, lam, lam2, rcoef, &q_vals[0], q_step, nq, mode)
        for j in range(n):
            ytmp[j] = y[j] + hs * (_A31 * f1[j] + _A32 * f2[j])
        _rhs(x + _C3 * hs, ytmp, f3, lam, lam2, rcoef, &q_vals[0], q_step, nq, mode)
        for j in range(n):
            ytmp[j] = y[j] + hs * (_A41 * f1[j] + _A42 * f2[j] + _A43 * f3[j])
        _rhs(x + _C4 * hs, ytmp, f4, lam, lam2, rcoef, &q_vals[0], q_step, nq, mode)
        for j in range(n):
            ytmp[j] = y[j] + hs * (_A51 * f1[j] + _A52 * f2[j] + _A53 * f3[j] + _A54 * f4[j])
        _rhs(x + _C5 * hs, ytmp, f5, lam, lam2, rcoef, &q_vals[0], q_step, nq, mode)
        for j in range(n):
            ytmp[j] = y[j] + hs * (_A61 * f1[j] + _A62 * f2[j] + _A63 * f3[j]
                                   + _A64 * f4[j] + _A65 * f5[j])
        _rhs(x + hs, ytmp, f6, lam, lam2, rcoef, &q_vals[0], q_step, nq, mode)
        for j in range(n):
            ynew[j] = y[j] + hs * (_B1 * f1[j] + _B3 * f3[j] + _B4 * f4[j]
                                   + _B5 * f5[j] + _B6 * f6[j])
        _rhs(x + hs, ynew, f7, lam, lam2, rcoef, &q_vals[0], q_step, nq, mode)

        ymax = 0.0
        finite = True
        for j in range(n):
            ay = _cabs(y[j])
            an = _cabs(ynew[j])
            if not (an < INFINITY):
                finite = False
                break
            mg = ay if ay > an else an
            if mg > ymax:
                ymax = mg
        if not finite:
            status = 2
            break
        err = 0.0
        flr = 0.01 * ymax        # couple components: relative control must
        for j in range(n):       # not stall on a transiently tiny component
            e = hs * (_E1 * f1[j] + _E3 * f3[j] + _E4 * f4[j] + _E5 * f5[j]
                      + _E6 * f6[j] + _E7 * f7[j])
            ay = _cabs(y[j])
            an = _cabs(ynew[j])
            mg = ay if ay > an else an
            if mg < flr:
                mg = flr
            sk = atol + rtol * mg
            err += (_cabs(e) / sk) ** 2
        err = sqrt(err / n)

        if err <= 1.0:
            x_new = x + hs
            if hit >= 0:
                x_new = x_out[hit]
            elif clamped:
                x_new = x1
            x = x_new
            for j in range(n):
                y[j] = ynew[j]
                f1[j] = f7[j]
            if hit >= 0:
                for j in range(n):
                    out[hit, j] = y[j]
                iout += 1
            if not clamped:
                fac = 0.9 * err ** -0.2 if err > 0.0 else 5.0
                if fac > 5.0:
                    fac = 5.0
                h_prop = h * fac
        else:
            fac = 0.9 * err ** -0.2
            if fac < 0.2:
                fac = 0.2
            h_prop = h * fac
            if h_prop < hmin:
                status = 1
                break

    if status == 0:
        while iout < nout:
            for j in range(n):
                out[iout, j] = y[j]
            iout += 1
    return status, np.array([y[j] for j in range(n)])
