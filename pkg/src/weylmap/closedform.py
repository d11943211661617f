"""Exact constant-coefficient formulas for zero-potential problems.

With q identically zero the equation on each layer is y'' = -lam * a^2 * y,
so the value/derivative propagator over a span ell has entries built from
cos(z) and sin(z)/z with z^2 = lam * a^2 * ell^2.  Everything here is
written in terms of functions of z^2, which makes all formulas single-valued
in lam (no square-root branch) and removes the removable singularities at
lam = 0.  These closed forms serve as the model-problem engine of the
inverse pipeline and as an independent oracle for the ODE integrator.
"""

from __future__ import annotations

import cmath

import numpy as np

from .model import ProblemSpec, transfer_matrix, transfer_matrix_inverse

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)      # mapped to [0, 1]
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS

_SMALL = 0.25


def _u(z):
    """sin(z)/z, stable at z = 0 (entire in z^2)."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < _SMALL
    zs = np.where(small, z, 1.0)
    z2 = zs * zs
    ser = 1.0 + z2 * (-1.0 / 6.0 + z2 * (1.0 / 120.0 + z2 * (-1.0 / 5040.0 + z2 / 362880.0)))
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        direct = np.sin(z) / np.where(small, 1.0, z)
    return np.where(small, ser, direct)


def _w(z):
    """(1 - cos(z)) / z^2, stable at z = 0."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < _SMALL
    zs = np.where(small, z, 1.0)
    z2 = zs * zs
    ser = 0.5 + z2 * (-1.0 / 24.0 + z2 * (1.0 / 720.0 + z2 * (-1.0 / 40320.0 + z2 / 3628800.0)))
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        direct = (1.0 - np.cos(z)) / np.where(small, 1.0, z * z)
    return np.where(small, ser, direct)


def _u1(z):
    """d(sin z / z)/d(z^2) = (z cos z - sin z) / (2 z^3), stable at z = 0."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < _SMALL
    zs = np.where(small, z, 1.0)
    z2 = zs * zs
    ser = -1.0 / 6.0 + z2 * (1.0 / 60.0 + z2 * (-1.0 / 1680.0 + z2 / 90720.0))
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        direct = (z * np.cos(z) - np.sin(z)) / np.where(small, 1.0, 2.0 * z ** 3)
    return np.where(small, ser, direct)


def _as_scalar(v):
    a = np.asarray(v)
    return complex(a) if a.ndim == 0 else a


def propagator(lam, a, ell):
    """Entries (c, s, sp, c) of the layer propagator over a span ell.

    Maps (y, y') at the span start to (c*y + s*y', sp*y + c*y') at the end;
    determinant c^2 - s*sp = 1 exactly in exact arithmetic.
    """
    lam = np.asarray(lam, dtype=complex)
    z = np.sqrt(lam * a * a) * ell     # any square-root branch; entries are even
    c = np.cos(z)
    s = ell * _u(z)
    sp = -lam * a * a * ell * _u(z)
    return _as_scalar(c), _as_scalar(s), _as_scalar(sp)


def propagator_dlam(lam, a, ell):
    """lambda-derivatives of the propagator entries."""
    lam = np.asarray(lam, dtype=complex)
    a2 = a * a
    z = np.sqrt(lam * a2) * ell
    u = _u(z)
    u1 = _u1(z)
    dc = -(ell * ell * a2 / 2.0) * u
    ds = a2 * ell ** 3 * u1
    dsp = -a2 * ell * (u + z * z * u1)
    return _as_scalar(dc), _as_scalar(ds), _as_scalar(dsp)


def _apply(entries, y, dy):
    c, s, sp = entries
    return c * y + s * dy, sp * y + c * dy


def layer_start_pairs(spec: ProblemSpec, lam):
    """Initial (value, slope) of phi on each layer: (1, h) at 0 and the
    transferred pair at b+0."""
    vb, db = _apply(propagator(lam, spec.a1, spec.b), 1.0 + 0j, spec.h)
    v2 = spec.d1 * vb
    d2 = spec.d2 * vb + db / spec.d1
    return (1.0 + 0j, spec.h), (v2, d2), (vb, db)


def q0_phi_trace(spec: ProblemSpec, lam, xs):
    """phi and phi' of the zero-potential problem on the points xs.

    Points with x <= b use the left-layer formula (matching the ODE-trace
    convention of storing left limits at the jump).  Also returns the
    one-sided pairs at the jump.
    """
    xs = np.asarray(xs, dtype=float)
    (v1, d1), (v2, d2), (vb, db) = layer_start_pairs(spec, lam)
    ys = np.empty(xs.shape, dtype=complex)
    dys = np.empty(xs.shape, dtype=complex)
    left = xs <= spec.b
    if np.any(left):
        z = np.sqrt(np.asarray(lam, dtype=complex) * spec.a1 ** 2) * xs[left]
        cL = np.cos(z)
        sL = xs[left] * _u(z)
        spL = -lam * spec.a1 ** 2 * xs[left] * _u(z)
        ys[left] = cL * v1 + sL * d1
        dys[left] = spL * v1 + cL * d1
    if np.any(~left):
        t = xs[~left] - spec.b
        z = np.sqrt(np.asarray(lam, dtype=complex) * spec.a2 ** 2) * t
        cR = np.cos(z)
        sR = t * _u(z)
        spR = -lam * spec.a2 ** 2 * t * _u(z)
        ys[~left] = cR * v2 + sR * d2
        dys[~left] = spR * v2 + cR * d2
    return ys, dys, (vb, db), (v2, d2)


def q0_delta(spec: ProblemSpec, lam):
    """(Delta, dDelta/dlam, Delta0) of the zero-potential problem.

    Delta = -(phi'(T) + H phi(T)); Delta0 = psi(0).
    """
    l1, l2 = spec.b, spec.T - spec.b
    P1 = propagator(lam, spec.a1, l1)
    P2 = propagator(lam, spec.a2, l2)
    dP1 = propagator_dlam(lam, spec.a1, l1)
    dP2 = propagator_dlam(lam, spec.a2, l2)
    J = transfer_matrix(spec.d1, spec.d2)

    # phi at T and its lambda-derivative
    yb, db_ = _apply(P1, 1.0 + 0j, spec.h)
    dyb, ddb = _apply(dP1, 1.0 + 0j, spec.h)
    yb2 = J[0, 0] * yb
    db2 = J[1, 0] * yb + J[1, 1] * db_
    dyb2 = J[0, 0] * dyb
    ddb2 = J[1, 0] * dyb + J[1, 1] * ddb
    yT, dT = _apply(P2, yb2, db2)
    dyT = _apply(dP2, yb2, db2)[0] + _apply(P2, dyb2, ddb2)[0]
    ddT = _apply(dP2, yb2, db2)[1] + _apply(P2, dyb2, ddb2)[1]
    delta = -(dT + spec.H * yT)
    ddelta = -(ddT + spec.H * dyT)

    # psi at 0 (backward propagation: negative spans invert the layers)
    Jinv = transfer_matrix_inverse(spec.d1, spec.d2)
    P2b = propagator(lam, spec.a2, -l2)
    P1b = propagator(lam, spec.a1, -l1)
    pb, pdb = _apply(P2b, 1.0 + 0j, -spec.H)
    pb2 = Jinv[0, 0] * pb
    pdb2 = Jinv[1, 0] * pb + Jinv[1, 1] * pdb
    p0, _ = _apply(P1b, pb2, pdb2)
    return delta, ddelta, p0


def q0_psi_at0_check(spec: ProblemSpec, lam):
    """U(psi) = psi'(0) - h psi(0); equals Delta (test cross-check)."""
    l1, l2 = spec.b, spec.T - spec.b
    Jinv = transfer_matrix_inverse(spec.d1, spec.d2)
    pb, pdb = _apply(propagator(lam, spec.a2, -l2), 1.0 + 0j, -spec.H)
    pb2 = Jinv[0, 0] * pb
    pdb2 = Jinv[1, 0] * pb + Jinv[1, 1] * pdb
    p0, pd0 = _apply(propagator(lam, spec.a1, -l1), pb2, pdb2)
    return pd0 - spec.h * p0


def _phi1(z):
    """(exp(z) - 1)/z, stable near z = 0 (vectorized)."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 0.5
    zs = np.where(small, z, 1.0)
    ser = np.zeros(z.shape, dtype=complex)
    term = np.ones(z.shape, dtype=complex)
    for m in range(1, 14):
        ser = ser + term
        term = term * zs / (m + 1)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        direct = (np.exp(z) - 1.0) / np.where(small, 1.0, z)
    return np.where(small, ser, direct)


def _exp_coeffs(v, d, p):
    """Log-form exponential-mode coefficients of v*cos(pt) + d*t*u(pt).

    The function equals c_plus e^{ipt} + c_minus e^{-ipt} with
    c_pm = (v -+ i d/p)/2; returns [(log c, sign)] skipping vanishing modes.
    """
    out = []
    for sign in (1.0, -1.0):
        c = 0.5 * (v - sign * 1j * d / p)
        if c != 0:
            out.append((np.log(complex(c)), sign))
    return out


def _segment_product_integral(vA, dA, pA, vB, dB, pB, s):
    """Integral of (vA cos(pA t) + dA t u(pA t)) (vB cos(pB t) + dB t u(pB t))
    for t from 0 to each s >= 0.

    Evaluated by Gauss-Legendre panels when both frequencies are slow over
    the span, otherwise in the exponential-mode basis with all exponents
    combined in log form, which keeps every intermediate on the scale of
    the true integrand even when the modes span hundreds of orders of
    magnitude.  Callers should align the signs of pA and pB so that
    |pA - pB| <= |pA + pB| (the result is even in each p).
    """
    s = np.asarray(s, dtype=float)
    scale = max(abs(pA), abs(pB))
    big = scale * s >= 0.5
    out = np.empty(s.shape, dtype=complex)

    if np.any(~big):
        ss = s[~big]
        acc = np.zeros(ss.shape, dtype=complex)
        for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
            t = ss * node
            fA = vA * np.cos(pA * t) + dA * t * _u(pA * t)
            fB = vB * np.cos(pB * t) + dB * t * _u(pB * t)
            acc = acc + weight * fA * fB
        out[~big] = acc * ss

    if np.any(big):
        # both |pA| s and |pB| s are >= 0.5 * min(|p|/max|p|): the
        # near-diagonal precondition keeps the two magnitudes comparable
        sb = s[big]
        acc = np.zeros(sb.shape, dtype=complex)
        for LA, sg in _exp_coeffs(vA, dA, pA):
            for LB, tg in _exp_coeffs(vB, dB, pB):
                c = 1j * (sg * pA + tg * pB)
                w = LA + LB
                cs = c * sb
                slow = np.abs(cs) < 0.5
                vals = np.empty(sb.shape, dtype=complex)
                if np.any(slow):
                    vals[slow] = np.exp(w) * sb[slow] * _phi1(cs[slow])
                if np.any(~slow):
                    vals[~slow] = (np.exp(w + cs[~slow]) - np.exp(w)) / c
                acc = acc + vals
        out[big] = acc
    return out


def q0_weyl_mu(spec: ProblemSpec, lam, rho, theta_log: float = 0.0) -> complex:
    """Rescaled Weyl residue mu = M * theta^2 at a zero-potential eigenvalue.

    Computed as 1 / integral of r * (phi/theta)^2 with the second layer
    evaluated through the unit solution anchored at x = T (where the
    eigenfunction is smallest); matching the two representations at the
    jump keeps every factor on a representable scale for any branch index.
    ``rho`` is a square root of lam (either sign).
    """
    lam = complex(lam)
    rho = complex(rho)
    if (rho * spec.a2).imag < 0:
        rho = -rho
    l2 = spec.T - spec.b
    th = cmath.exp(-theta_log)

    (v1, d1p), (v2, d2p), _ = layer_start_pairs(spec, lam)
    v1, d1p, v2, d2p = v1 * th, d1p * th, v2 * th, d2p * th
    p1 = rho * spec.a1
    p2 = rho * spec.a2
    w1 = spec.a1 ** 2 * _segment_product_integral(
        v1, d1p, p1, v1, d1p, p1, np.array([spec.b]))[0]

    s2 = (rho * spec.a2).imag * l2
    sc = cmath.exp(-s2)
    vu, du = sc * 1.0, sc * spec.H          # w = T - x coordinates
    c, s_, sp = propagator(lam, spec.a2, l2)
    psi_v = c * vu + s_ * du                # psi at x = b+0 (scaled)
    psi_d = -(sp * vu + c * du)             # x-derivative at b+0
    if abs(v2) * (1.0 + abs(rho)) >= abs(d2p):
        beta = psi_v / v2
    else:
        beta = psi_d / d2p
    w2 = spec.a2 ** 2 * _segment_product_integral(
        vu, du, p2, vu, du, p2, np.array([l2]))[0] / (beta * beta)
    return 1.0 / complex(w1 + w2)


def q0_pair_integral(spec: ProblemSpec, lamA, lamB, xs, scaleA=1.0, scaleB=1.0):
    """Integral of r(t) phi(t, lamA) phi(t, lamB) / (scaleA*scaleB) from 0
    to each x of xs, for the zero-potential problem.

    Intended for nearly-coincident spectral parameters, where the Wronskian
    quotient cancels; the scales allow the caller to keep everything in the
    rescaled regime when solutions grow exponentially in the branch index.
    """
    xs = np.asarray(xs, dtype=float)
    rhoA = np.sqrt(complex(lamA))
    rhoB = np.sqrt(complex(lamB))
    if abs(rhoA - rhoB) > abs(rhoA + rhoB):
        rhoB = -rhoB

    (v1A, d1A), (v2A, d2A), _ = layer_start_pairs(spec, lamA)
    (v1B, d1B), (v2B, d2B), _ = layer_start_pairs(spec, lamB)
    v1A, d1A, v2A, d2A = (v / scaleA for v in (v1A, d1A, v2A, d2A))
    v1B, d1B, v2B, d2B = (v / scaleB for v in (v1B, d1B, v2B, d2B))

    out = np.empty(xs.shape, dtype=complex)
    left = xs <= spec.b
    pA1, pB1 = rhoA * spec.a1, rhoB * spec.a1
    pA2, pB2 = rhoA * spec.a2, rhoB * spec.a2

    if np.any(left):
        out[left] = spec.a1 ** 2 * _segment_product_integral(
            v1A, d1A, pA1, v1B, d1B, pB1, xs[left])
    if np.any(~left):
        base = spec.a1 ** 2 * _segment_product_integral(
            v1A, d1A, pA1, v1B, d1B, pB1, np.array([spec.b]))[0]
        out[~left] = base + spec.a2 ** 2 * _segment_product_integral(
            v2A, d2A, pA2, v2B, d2B, pB2, xs[~left] - spec.b)
    return out
