"""Numerical integration of the differential equation across the jump.

All propagation is done by an embedded adaptive Dormand-Prince 5(4) step
(see the ``_kernel`` backends) applied to the first-order system attached to
-y'' + q(x) y = lambda r(x) y on one layer at a time; the unimodular
transfer matrix is applied when a path crosses the interface.  Three state
layouts are supported: the plain value/derivative pair, the pair augmented
with its lambda-derivative (variational system, used for derivatives of the
characteristic function), and two solutions at different spectral
parameters augmented with the running integral of r * y1 * y2 (used for the
near-diagonal evaluation of the two-point kernel).
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass

import numpy as np

from . import _kernel
from .config import DEFAULT_CONFIG, SolverConfig
from .errors import InvalidInterval, NearEigenvalue, NonFinite, ToleranceNotMet
from .model import ProblemSpec, transfer_matrix, transfer_matrix_inverse


@dataclass(frozen=True)
class SolutionSample:
    """Value/derivative pair of a solution at one point."""

    x: float
    y: complex
    dy: complex


@dataclass(frozen=True)
class SolutionTrace:
    """A solution sampled on a grid, with one-sided limits at the jump.

    ``ys``/``dys`` follow ``xs`` in ascending order regardless of the
    integration direction.  At a grid point equal to the jump location the
    stored value is the left limit; both limits are available as
    ``b_left``/``b_right`` whenever the integration path crossed the jump.
    """

    lam: complex
    kind: str
    xs: np.ndarray
    ys: np.ndarray
    dys: np.ndarray
    b_left: tuple[complex, complex] | None = None
    b_right: tuple[complex, complex] | None = None

    def sample(self, i: int) -> SolutionSample:
        return SolutionSample(float(self.xs[i]), complex(self.ys[i]), complex(self.dys[i]))

    def at(self, x: float) -> SolutionSample:
        i = int(np.argmin(np.abs(self.xs - x)))
        if abs(self.xs[i] - x) > 1e-12 * max(1.0, abs(x)):
            raise KeyError(f"x = {x} is not a grid point of this trace")
        return self.sample(i)


def _raise_for_status(status: int):
    if status == 1:
        raise ToleranceNotMet("step size underflow in the adaptive integrator")
    if status == 2:
        raise NonFinite("non-finite state encountered during integration")


def _apply_jump(spec: ProblemSpec, state: np.ndarray, forward: bool) -> np.ndarray:
    J = transfer_matrix(spec.d1, spec.d2) if forward else \
        transfer_matrix_inverse(spec.d1, spec.d2)
    new = state.copy()
    new[0:2] = J @ state[0:2]
    if state.size >= 4:
        new[2:4] = J @ state[2:4]   # variational pair or second solution
    return new


def _run_segment(spec, y0, x_from, x_to, lam, lam2, mode, rtol, atol, x_out):
    """One jump-free segment; picks the layer weight from the midpoint."""
    mid = 0.5 * (x_from + x_to)
    rc = spec.a1 ** 2 if mid < spec.b else spec.a2 ** 2
    out = np.zeros((len(x_out), y0.size), dtype=complex)
    status, y_final = _kernel.integrate_layer(
        np.asarray(y0, dtype=complex), float(x_from), float(x_to), complex(lam),
        complex(lam2), complex(rc), spec.q_values, spec.q_step, float(rtol),
        float(atol), np.asarray(x_out, dtype=float), out, int(mode))
    _raise_for_status(status)
    return out, np.asarray(y_final, dtype=complex)


def _integrate_path(spec, lam, y0, x_from, x_to, x_out, mode, rtol, atol, lam2=0.0):
    """Propagate across at most one jump crossing.

    Returns (states at x_out, final state, (b_left, b_right) or None).
    Output points equal to the jump location always record the left limit.
    """
    b = spec.b
    forward = x_to >= x_from
    x_out = np.asarray(x_out, dtype=float)
    crosses = (x_from < b < x_to) if forward else (x_to < b < x_from)

    if not crosses:
        out, y_final = _run_segment(spec, y0, x_from, x_to, lam, lam2, mode, rtol, atol, x_out)
        return out, y_final, None

    n = np.asarray(y0).size
    states = np.zeros((len(x_out), n), dtype=complex)
    if forward:
        first = x_out <= b
        out1, y_b_near = _run_segment(spec, y0, x_from, b, lam, lam2, mode, rtol, atol,
                                      x_out[first])
        states[first] = out1
        y_left = y_b_near
        y_right = _apply_jump(spec, y_b_near, forward=True)
        out2, y_final = _run_segment(spec, y_right, b, x_to, lam, lam2, mode, rtol, atol,
                                     x_out[~first])
        states[~first] = out2
    else:
        first = x_out >= b
        at_b = x_out == b
        keep = first & ~at_b
        out1, y_b_near = _run_segment(spec, y0, x_from, b, lam, lam2, mode, rtol, atol,
                                      x_out[keep])
        states[keep] = out1
        y_right = y_b_near
        y_left = _apply_jump(spec, y_b_near, forward=False)
        states[at_b] = y_left
        out2, y_final = _run_segment(spec, y_left, b, x_to, lam, lam2, mode, rtol, atol,
                                     x_out[~first])
        states[~first] = out2
    b_pair = ((complex(y_left[0]), complex(y_left[1])),
              (complex(y_right[0]), complex(y_right[1])))
    return states, y_final, b_pair


def shared_grid(spec: ProblemSpec, config: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    return np.linspace(0.0, spec.T, config.grid_points)


def _initial_state(spec, kind, mode):
    if kind == "phi":
        pair = (1.0 + 0j, spec.h)
        x0 = 0.0
    elif kind == "S":
        pair = (0j, 1.0 + 0j)
        x0 = 0.0
    elif kind == "psi":
        pair = (1.0 + 0j, -spec.H)
        x0 = spec.T
    else:
        raise ValueError(f"unknown solution kind {kind!r}")
    if mode == 1:
        return np.array([pair[0], pair[1], 0j, 0j]), x0
    return np.array([pair[0], pair[1]]), x0


def _build_trace(spec, lam, kind, mode, config, x_out=None):
    rtol, atol = config.ode_rtol, config.ode_atol
    xs = shared_grid(spec, config) if x_out is None else np.asarray(x_out, dtype=float)
    y0, x0 = _initial_state(spec, kind, mode)
    if kind == "psi":
        order = np.argsort(-xs, kind="stable")
        states, _, b_pair = _integrate_path(spec, lam, y0, spec.T, 0.0, xs[order],
                                            mode, rtol, atol)
        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)
        states = states[inv]
    else:
        states, _, b_pair = _integrate_path(spec, lam, y0, 0.0, spec.T, xs,
                                            mode, rtol, atol)
    b_left = b_pair[0] if b_pair else None
    b_right = b_pair[1] if b_pair else None
    main = SolutionTrace(lam=complex(lam), kind=kind, xs=xs,
                         ys=states[:, 0], dys=states[:, 1],
                         b_left=b_left, b_right=b_right)
    if mode == 1:
        var = SolutionTrace(lam=complex(lam), kind="d" + kind, xs=xs,
                            ys=states[:, 2], dys=states[:, 3])
        return main, var
    return main


def integrate(spec: ProblemSpec, lam: complex, init: SolutionSample, target: float,
              config: SolverConfig = DEFAULT_CONFIG) -> SolutionTrace:
    """Advance an arbitrary initial value/derivative pair to ``target``.

    The returned trace is sampled at the shared-grid points lying between
    the start point and the target (plus the target itself).
    """
    if not (0.0 <= init.x <= spec.T) or not (0.0 <= target <= spec.T):
        raise InvalidInterval("integration limits must lie inside [0, T]")
    lo, hi = min(init.x, target), max(init.x, target)
    xs = shared_grid(spec, config)
    xs = xs[(xs >= lo) & (xs <= hi)]
    if target not in xs:
        xs = np.sort(np.append(xs, target))
    if init.x < target:
        x_out = xs[xs > init.x]
    else:
        x_out = xs[::-1]
        x_out = x_out[x_out < init.x]
    y0 = np.array([init.y, init.dy], dtype=complex)
    states, _, b_pair = _integrate_path(spec, lam, y0, init.x, target, x_out,
                                        0, config.ode_rtol, config.ode_atol)
    if init.x > target:
        x_out = x_out[::-1]
        states = states[::-1]
    return SolutionTrace(lam=complex(lam), kind="segment", xs=x_out,
                         ys=states[:, 0], dys=states[:, 1],
                         b_left=b_pair[0] if b_pair else None,
                         b_right=b_pair[1] if b_pair else None)


def phi(spec, lam, config=DEFAULT_CONFIG, x_out=None) -> SolutionTrace:
    """Solution with y(0) = 1, y'(0) = h."""
    return _build_trace(spec, lam, "phi", 0, config, x_out)


def S_sol(spec, lam, config=DEFAULT_CONFIG, x_out=None) -> SolutionTrace:
    """Solution with y(0) = 0, y'(0) = 1."""
    return _build_trace(spec, lam, "S", 0, config, x_out)


def psi(spec, lam, config=DEFAULT_CONFIG, x_out=None) -> SolutionTrace:
    """Solution with y(T) = 1, y'(T) = -H, integrated right to left."""
    return _build_trace(spec, lam, "psi", 0, config, x_out)


def lambda_derivative(spec, lam, kind: str = "phi",
                      config: SolverConfig = DEFAULT_CONFIG, x_out=None):
    """Trace of the lambda-derivative of phi or S (variational system)."""
    if kind not in ("phi", "S"):
        raise ValueError("lambda-derivative implemented for kinds 'phi' and 'S'")
    main, var = _build_trace(spec, lam, kind, 1, config, x_out)
    return var


def phi_with_derivative(spec, lam, config=DEFAULT_CONFIG, x_out=None):
    """phi trace together with its lambda-derivative trace (one sweep)."""
    return _build_trace(spec, lam, "phi", 1, config, x_out)


def endpoint_state(spec, lam, kind: str, variational: bool = False,
                   config: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Final state of phi/S at x = T or of psi at x = 0, without a trace."""
    mode = 1 if variational else 0
    y0, x0 = _initial_state(spec, kind, mode)
    target = 0.0 if kind == "psi" else spec.T
    _, y_final, _ = _integrate_path(spec, lam, y0, x0, target,
                                    np.empty(0), mode, config.ode_rtol, config.ode_atol)
    return y_final


def Phi_solution(spec, lam, M_value: complex, config=DEFAULT_CONFIG, x_out=None) -> SolutionTrace:
    """The Weyl solution S + M * phi (unit Robin data at 0, zero at T)."""
    if not np.isfinite(M_value):
        raise NearEigenvalue("Weyl value is not finite at this lambda")
    tr_S = S_sol(spec, lam, config, x_out)
    tr_p = phi(spec, lam, config, x_out)
    b_left = b_right = None
    if tr_S.b_left is not None:
        b_left = (tr_S.b_left[0] + M_value * tr_p.b_left[0],
                  tr_S.b_left[1] + M_value * tr_p.b_left[1])
        b_right = (tr_S.b_right[0] + M_value * tr_p.b_right[0],
                   tr_S.b_right[1] + M_value * tr_p.b_right[1])
    return SolutionTrace(lam=complex(lam), kind="Phi", xs=tr_S.xs,
                         ys=tr_S.ys + M_value * tr_p.ys,
                         dys=tr_S.dys + M_value * tr_p.dys,
                         b_left=b_left, b_right=b_right)


def wronskian(u: SolutionSample, v: SolutionSample) -> complex:
    """y_u * y_v' - y_u' * y_v at a common point."""
    if u.x != v.x:
        raise ValueError("Wronskian requires samples at the same x")
    return u.y * v.dy - u.dy * v.y


def _pair_states(spec, x, lam, mu, config):
    """Joint propagation of phi(., lam), phi(., mu) and their product integral."""
    y0 = np.array([1.0 + 0j, spec.h, 1.0 + 0j, spec.h, 0j], dtype=complex)
    _, y_final, _ = _integrate_path(spec, lam, y0, 0.0, x, np.empty(0), 2,
                                    config.ode_rtol, config.ode_atol, lam2=mu)
    return y_final


def phi_square_integral(spec: ProblemSpec, lam: complex,
                        config: SolverConfig = DEFAULT_CONFIG) -> complex:
    """Integral of r(t) * phi(t, lam)^2 over the whole interval.

    At a simple eigenvalue this equals Delta'(lam) / Delta_0(lam), so its
    reciprocal is the Weyl residue; unlike that quotient it involves no
    exponentially deep cancellation on the second branch.
    """
    return complex(_pair_states(spec, spec.T, lam, lam, config)[4])


def weyl_norm_mu(spec: ProblemSpec, lam: complex, rho: complex,
                 theta_log: float = 0.0,
                 config: SolverConfig = DEFAULT_CONFIG) -> complex:
    """Rescaled Weyl residue mu = M * theta^2 at an eigenvalue.

    Equal to 1 / integral of r * (phi/theta)^2, with the second layer
    evaluated through the boundary solution anchored at x = T and matched
    to phi at the jump.  Integrating each layer from the endpoint where the
    eigenfunction is small keeps the computation stable on both eigenvalue
    branches, where one-directional propagation would drown the decaying
    component in roundoff seeded into the growing one.
    """
    lam = complex(lam)
    rho = complex(rho)
    if (rho * spec.a2).imag < 0:
        rho = -rho
    s2 = (rho * spec.a2).imag * (spec.T - spec.b)
    if theta_log > 690.0 or s2 > 690.0:
        raise NonFinite(
            f"branch growth exponent {max(theta_log, s2):.0f} exceeds double range")
    th = cmath.exp(-theta_log)
    rtol, atol = config.ode_rtol, 0.0   # prescaled states: pure relative control

    y0 = np.array([th, th * spec.h, th, th * spec.h, 0j], dtype=complex)
    _, y_left, _ = _integrate_path(spec, lam, y0, 0.0, spec.b, np.empty(0), 2,
                                   rtol, atol, lam2=lam)
    w1 = y_left[4]
    phi_plus = _apply_jump(spec, y_left, forward=True)

    sc = cmath.exp(-s2)
    z0 = np.array([sc, -sc * spec.H, sc, -sc * spec.H, 0j], dtype=complex)
    _, z_b, _ = _integrate_path(spec, lam, z0, spec.T, spec.b, np.empty(0), 2,
                                rtol, atol, lam2=lam)
    w2_psi = -z_b[4]                       # integral of r * psi_hat^2 over (b, T)
    if abs(phi_plus[0]) * (1.0 + abs(rho)) >= abs(phi_plus[1]):
        beta = z_b[0] / phi_plus[0]
    else:
        beta = z_b[1] / phi_plus[1]
    return 1.0 / complex(w1 + w2_psi / (beta * beta))


def D_kernel_paths(spec, x: float, lam: complex, mu: complex,
                   config: SolverConfig = DEFAULT_CONFIG):
    """Both evaluations of the two-point kernel.

    Returns (quotient, integral): the Wronskian-quotient form
    <phi(lam), phi(mu)> / (lam - mu) (None when lam == mu) and the
    Lagrange-identity integral of r * phi(lam) * phi(mu) from 0 to x, the
    latter accumulated by the adaptive integrator itself.
    """
    if not (0.0 <= x <= spec.T):
        raise InvalidInterval(f"x = {x} outside [0, {spec.T}]")
    st = _pair_states(spec, x, lam, mu, config)
    integral = complex(st[4])
    if lam == mu:
        return None, integral
    quotient = (st[0] * st[3] - st[1] * st[2]) / (lam - mu)
    return quotient, integral


def D_kernel(spec, x: float, lam: complex, mu: complex,
             config: SolverConfig = DEFAULT_CONFIG) -> complex:
    """Two-point kernel; uses the integral form near the diagonal."""
    quotient, integral = D_kernel_paths(spec, x, lam, mu, config)
    if quotient is None or abs(lam - mu) < config.dkernel_switch * (1.0 + abs(lam)):
        return integral
    return quotient
