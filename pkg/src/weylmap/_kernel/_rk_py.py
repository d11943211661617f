"""Pure-Python layer integrator (Dormand-Prince 5(4), complex states).

This is the fallback for the compiled kernel in ``_rk.pyx``; both implement
exactly the same algorithm and must stay in lockstep.  The integrator
advances the first-order system attached to -y'' + q(x) y = lam * r * y on
one weight layer (r constant, q piecewise-linear between uniform samples),
never across the jump point; the caller splits paths at the interface.

State layouts by mode:
  0: (y, y')
  1: (y, y', v, v')      with  v'' = (q - lam r) v - r y   (lambda-derivative)
  2: (y, y', z, z', w)   with  z solving the equation at lam2
                          and  w' = r * y * z              (kernel quadrature)
"""

import math

BACKEND_NAME = "python"

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 0.2, 0.3, 0.8, 8.0 / 9.0
_A21 = 0.2
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                                49.0 / 176.0, -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                                -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)


def _rhs(x, y, f, lam, lam2, rcoef, q_vals, q_step, nq, mode):
    t = x / q_step
    i = int(t)
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


def integrate_layer(y0, x0, x1, lam, lam2, rcoef, q_vals, q_step, rtol, atol,
                    x_out, out, mode):
    """Advance the state from x0 to x1 recording it at each x_out point.

    x_out must be sorted in the direction of integration with every entry in
    (x0, x1]; out must be a writable (len(x_out), n) complex buffer.
    Returns (status, y_final): status 0 = ok, 1 = step underflow,
    2 = non-finite state encountered.
    """
    n = 2 if mode == 0 else (4 if mode == 1 else 5)
    nq = len(q_vals)
    span = x1 - x0
    y = [complex(v) for v in y0[:n]]
    nout = len(x_out)

    if span == 0.0:
        for m in range(nout):
            for j in range(n):
                out[m, j] = y[j]
        return 0, y

    direction = 1.0 if span > 0.0 else -1.0
    f1 = [0j] * n
    f2 = [0j] * n
    f3 = [0j] * n
    f4 = [0j] * n
    f5 = [0j] * n
    f6 = [0j] * n
    f7 = [0j] * n
    ytmp = [0j] * n
    ynew = [0j] * n

    _rhs(x0, y, f1, lam, lam2, rcoef, q_vals, q_step, nq, mode)

    # starting step size (Hairer, Norsett, Wanner II.4)
    y0max = max(abs(v) for v in y)
    if y0max == 0.0:
        y0max = 1.0
    d0 = d1 = 0.0
    for j in range(n):
        sk = atol + rtol * max(abs(y[j]), 0.01 * y0max)
        d0 += abs(y[j] / sk) ** 2
        d1 += abs(f1[j] / sk) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, abs(span))
    for j in range(n):
        ytmp[j] = y[j] + direction * h0 * f1[j]
    _rhs(x0 + direction * h0, ytmp, f2, lam, lam2, rcoef, q_vals, q_step, nq, mode)
    d2 = 0.0
    for j in range(n):
        sk = atol + rtol * max(abs(y[j]), 0.01 * y0max)
        d2 += abs((f2[j] - f1[j]) / sk) ** 2
    d2 = math.sqrt(d2 / n) / h0
    dm = max(d1, d2)
    h1 = max(1e-6, h0 * 1e-3) if dm <= 1e-15 else (0.01 / dm) ** 0.2
    h_prop = min(100.0 * h0, h1, abs(span))

    x = x0
    iout = 0
    hmin = 16.0 * 2.220446049250313e-16 * max(abs(x0), abs(x1))
    max_steps = 10_000_000
    steps = 0

    while direction * (x1 - x) > hmin:
        steps += 1
        if steps > max_steps:
            return 1, y
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
            # output point coincides with current x up to roundoff
            if hit >= 0:
                for j in range(n):
                    out[hit, j] = y[j]
                iout += 1
                continue
            return 1, y

        hs = direction * h

        for j in range(n):
            ytmp[j] = y[j] + hs * _A21 * f1[j]
        _rhs(x + _C2 * hs, ytmp, f2, lam, lam2, rcoef, q_vals, q_step, nq, mode)
        for j in range(n):
            ytmp[j] = y[j] + hs * (_A31 * f1[j] + _A32 * f2[j])
        _rhs(x + _C3 * hs, ytmp, f3, lam, lam2, rcoef, q_vals, q_step, nq, mode)
        for j in range(n):
            ytmp[j] = y[j] + hs * (_A41 * f1[j] + _A42 * f2[j] + _A43 * f3[j])
        _rhs(x + _C4 * hs, ytmp, f4, lam, lam2, rcoef, q_vals, q_step, nq, mode)
        for j in range(n):
            ytmp[j] = y[j] + hs * (_A51 * f1[j] + _A52 * f2[j] + _A53 * f3[j] + _A54 * f4[j])
        _rhs(x + _C5 * hs, ytmp, f5, lam, lam2, rcoef, q_vals, q_step, nq, mode)
        for j in range(n):
            ytmp[j] = y[j] + hs * (_A61 * f1[j] + _A62 * f2[j] + _A63 * f3[j]
                                   + _A64 * f4[j] + _A65 * f5[j])
        _rhs(x + hs, ytmp, f6, lam, lam2, rcoef, q_vals, q_step, nq, mode)
        for j in range(n):
            ynew[j] = y[j] + hs * (_B1 * f1[j] + _B3 * f3[j] + _B4 * f4[j]
                                   + _B5 * f5[j] + _B6 * f6[j])
        _rhs(x + hs, ynew, f7, lam, lam2, rcoef, q_vals, q_step, nq, mode)

        ymax = 0.0
        finite = True
        for j in range(n):
            ay = abs(y[j])
            an = abs(ynew[j])
            if not (an < math.inf):
                finite = False
                break
            m = ay if ay > an else an
            if m > ymax:
                ymax = m
        if not finite:
            return 2, y
        err = 0.0
        floor = 0.01 * ymax      # couple components: relative control must
        for j in range(n):       # not stall on a transiently tiny component
            e = hs * (_E1 * f1[j] + _E3 * f3[j] + _E4 * f4[j] + _E5 * f5[j]
                      + _E6 * f6[j] + _E7 * f7[j])
            ay = abs(y[j])
            an = abs(ynew[j])
            m = ay if ay > an else an
            if m < floor:
                m = floor
            sk = atol + rtol * m
            err += abs(e / sk) ** 2
        err = math.sqrt(err / n)

        if err <= 1.0:
            x_new = x + hs
            if hit >= 0:
                x_new = x_out[hit]
            elif clamped and hit < 0:
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
                return 1, y

    # flush output points that coincide with the endpoint
    while iout < nout:
        for j in range(n):
            out[iout, j] = y[j]
        iout += 1
    return 0, y
