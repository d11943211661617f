"""Zero counting and localization by the argument principle.

Counts zeros of an analytic function inside axis-aligned rectangles via the
winding number (trapezoid quadrature of f'/f along the edges with adaptive
panel doubling until the result is recognizably an integer), recursively
subdivides until each cell isolates one zero, then polishes with Newton
started from the first contour moment.  Function evaluations are memoized
across the whole search because neighbouring cells share edges; contours
that run numerically through a zero are dodged by re-splitting the parent
cell at a shifted fraction.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

from .config import DEFAULT_CONFIG, SolverConfig
from .errors import CountMismatch, MultipleZeroDetected, SeedDivergence


class _ContourThroughZero(Exception):
    """A contour node landed (numerically) on a zero; the caller reshapes."""


class _Memo:
    def __init__(self, f):
        self.f = f
        self.cache = {}

    def __call__(self, z: complex):
        got = self.cache.get(z)
        if got is None:
            got = self.f(z)
            self.cache[z] = got
        return got


def _edge_points(z0: complex, z1: complex, n: int):
    ts = np.arange(n + 1) / n
    return [z0 + t * (z1 - z0) for t in ts]


def _contour(rect, n: int):
    re_lo, re_hi, im_lo, im_hi = rect
    c1 = complex(re_lo, im_lo)
    c2 = complex(re_hi, im_lo)
    c3 = complex(re_hi, im_hi)
    c4 = complex(re_lo, im_hi)
    pts = (_edge_points(c1, c2, n)[:-1] + _edge_points(c2, c3, n)[:-1]
           + _edge_points(c3, c4, n)[:-1] + _edge_points(c4, c1, n)[:-1])
    pts.append(c1)
    return pts


def _check_proximity(vals):
    # |f| can swing by hundreds of orders along one contour, so a node only
    # counts as "on a zero" relative to its immediate neighbours
    mags = [abs(v) for v, _ in vals]
    n = len(mags)
    for i in range(n):
        local = max(mags[(i - 1) % n], mags[(i + 1) % n])
        if mags[i] < 1e-8 * local or (mags[i] == 0.0 and local == 0.0):
            raise _ContourThroughZero


def _trapezoid_sum(pts, vals):
    acc = 0.0 + 0.0j
    mom = 0.0 + 0.0j
    for i in range(len(pts) - 1):
        z0, z1 = pts[i], pts[i + 1]
        (v0, d0), (v1, d1) = vals[i], vals[i + 1]
        g0, g1 = d0 / v0, d1 / v1
        dz = z1 - z0
        acc += 0.5 * (g0 + g1) * dz
        mom += 0.5 * (z0 * g0 + z1 * g1) * dz
    two_pi_i = 2.0j * math.pi
    return acc / two_pi_i, mom / two_pi_i


_LOG_CAP = 1.0     # max |log f| increment (phase and magnitude) per segment


def _winding(memo, rect, config):
    """Adaptively refined winding number; returns (count, first moment).

    Contour segments are split wherever log f changes quickly (in phase or
    in magnitude; the characteristic functions handled here swing over
    hundreds of orders of magnitude along a single edge), which
    concentrates evaluations near contour-adjacent zeros and steep
    exponential transitions instead of refining uniformly.
    """
    pts = _contour(rect, 16)
    vals = [memo(z) for z in pts]
    cap = _LOG_CAP
    for _ in range(config.winding_max_refine):
        for _ in range(40):
            _check_proximity(vals)
            new_pts = [pts[0]]
            new_vals = [vals[0]]
            refined = False
            for i in range(len(pts) - 1):
                v0, v1 = vals[i][0], vals[i + 1][0]
                if v0 == 0 or v1 == 0:
                    dlog = math.inf
                else:
                    ratio = v1 / v0
                    dlog = math.hypot(cmath.phase(ratio), math.log(abs(ratio)))
                if dlog > cap:
                    zm = 0.5 * (pts[i] + pts[i + 1])
                    new_pts.append(zm)
                    new_vals.append(memo(zm))
                    refined = True
                new_pts.append(pts[i + 1])
                new_vals.append(vals[i + 1])
            pts, vals = new_pts, new_vals
            if not refined:
                break
        w, mom = _trapezoid_sum(pts, vals)
        r = round(w.real)
        if abs(w - r) < config.winding_integer_tol and r >= 0:
            return int(r), mom
        cap *= 0.5     # integer test failed at resolved sampling: tighten
    raise CountMismatch(
        f"winding number failed to stabilize on rectangle {rect}")


def winding_count(f, rect, config: SolverConfig = DEFAULT_CONFIG) -> int:
    """Integer zero count inside the rectangle (with multiplicity)."""
    memo = f if isinstance(f, _Memo) else _Memo(f)
    return _winding(memo, rect, config)[0]


_SPLIT_FRACTIONS = (0.5, 0.53, 0.47, 0.56, 0.44, 0.61, 0.39)


def _subdivide(rect, frac, vertical):
    re_lo, re_hi, im_lo, im_hi = rect
    if vertical:
        mid = re_lo + frac * (re_hi - re_lo)
        return (re_lo, mid, im_lo, im_hi), (mid, re_hi, im_lo, im_hi)
    mid = im_lo + frac * (im_hi - im_lo)
    return (re_lo, re_hi, im_lo, mid), (re_lo, re_hi, mid, im_hi)


def _newton(memo, z0: complex, config, scale: float) -> complex:
    """Newton polish; accepts stagnation at the evaluator's noise floor."""
    z = complex(z0)
    prev_step = math.inf
    stall = 0
    for _ in range(config.newton_maxiter):
        v, d = memo(z)
        if d == 0:
            raise SeedDivergence(f"vanishing derivative during Newton at {z}")
        step = v / d
        z -= step
        if abs(z - z0) > 8.0 * scale + 1.0:
            raise SeedDivergence(f"Newton left the search cell from {z0}")
        s = abs(step)
        if s <= config.newton_tol * (1.0 + abs(z)):
            return z
        if s >= 0.5 * prev_step:
            stall += 1
            if stall >= 3:
                if s <= 1e-5 * (1.0 + abs(z)):
                    return z     # evaluation-noise floor reached
                raise SeedDivergence(f"Newton stagnated near {z}")
        else:
            stall = 0
        prev_step = s
    raise SeedDivergence(f"Newton failed to converge from {z0}")


def _search(memo, rect, config, depth, budget) -> list[complex]:
    budget["windings"] += 1
    if budget["windings"] > budget["limit"]:
        raise CountMismatch("zero search exceeded its evaluation budget")
    count, mom = _winding(memo, rect, config)
    if count == 0:
        return []
    re_lo, re_hi, im_lo, im_hi = rect
    diag = math.hypot(re_hi - re_lo, im_hi - im_lo)
    center = complex(0.5 * (re_lo + re_hi), 0.5 * (im_lo + im_hi))

    if count == 1:
        seed = mom if np.isfinite(mom) else center
        for start in (seed, center):
            try:
                return [_newton(memo, start, config, max(diag, 1e-9))]
            except SeedDivergence:
                continue
        # the contour moment of a small cell is itself a zero estimate
        if diag < 1e-6 * (1.0 + abs(center)):
            return [complex(mom)]
    elif diag < 1e-9 * (1.0 + abs(center)):
        raise MultipleZeroDetected(
            f"{count} zeros cluster within {diag:.2e} of {center}; "
            "only simple spectra are supported")
    if depth > 60:
        raise CountMismatch("rectangle subdivision exceeded the depth limit")

    vertical = (re_hi - re_lo) >= (im_hi - im_lo)
    for frac in _SPLIT_FRACTIONS:
        r1, r2 = _subdivide(rect, frac, vertical)
        try:
            # a non-stabilizing winding usually means the split line runs
            # next to a zero, so treat it like a contour hit and re-split
            c1, _ = _winding(memo, r1, config)
            c2, _ = _winding(memo, r2, config)
            if c1 + c2 != count:
                continue
            return _search(memo, r1, config, depth + 1, budget) + \
                _search(memo, r2, config, depth + 1, budget)
        except (_ContourThroughZero, CountMismatch):
            continue
    raise CountMismatch(f"could not split rectangle {rect} consistently")


def find_zeros_in_rectangle(f, rect, config: SolverConfig = DEFAULT_CONFIG):
    """All zeros of f inside the rectangle, isolated by subdivision.

    ``f(z)`` must return ``(value, derivative)``.  The outer rectangle is
    inflated slightly when a zero sits on its boundary, so callers should
    treat the rectangle as approximate by a few percent.  Raises
    MultipleZeroDetected for clustering zeros and CountMismatch when the
    winding numbers never stabilize or the count cannot be reproduced.
    """
    memo = f if isinstance(f, _Memo) else _Memo(f)
    rect_eff = rect
    total = None
    for _ in range(8):
        try:
            total, _ = _winding(memo, rect_eff, config)
            break
        except (_ContourThroughZero, CountMismatch):
            re_lo, re_hi, im_lo, im_hi = rect_eff
            cx, cy = 0.5 * (re_lo + re_hi), 0.5 * (im_lo + im_hi)
            hx, hy = 0.5 * (re_hi - re_lo) * 1.0311, 0.5 * (im_hi - im_lo) * 1.0311
            rect_eff = (cx - hx, cx + hx, cy - hy, cy + hy)
    if total is None:
        raise CountMismatch(f"could not place a zero-free contour around {rect}")
    budget = {"windings": 0, "limit": 400 + 250 * total}
    zeros = _search(memo, rect_eff, config, depth=0, budget=budget)
    if len(zeros) != total:
        raise CountMismatch(
            f"winding number {total} but isolated {len(zeros)} zeros in {rect_eff}")
    return zeros
