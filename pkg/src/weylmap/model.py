"""Problem data, validation and closed-form derived constants.

A problem instance is the differential expression -y'' + q(x) y = lambda r(x) y
on (0, T) with Robin conditions y'(0) - h y(0) = 0 and y'(T) + H y(T) = 0,
a piecewise-constant complex weight r(x) = a1^2 on (0, b), a2^2 on (b, T),
and a transmission jump at the interior point b:

    y(b+0)  = d1 * y(b-0)
    y'(b+0) = y'(b-0) / d1 + d2 * y(b-0)

so the value/derivative transfer matrix across b is [[d1, 0], [d2, 1/d1]]
with determinant exactly one.

Validation has two modes.  ``strict`` enforces the angle ordering
0 <= arg(a2) < arg(a1) < pi and the regularity condition
omega_pm = d1*a2 +- a1/d1 != 0 that the two-branch eigenvalue asymptotics
and the inverse pipeline rely on.  ``relaxed`` only checks the structural
constraints (b inside the interval, nonzero parameters) and leaves the
asymptotic constants undefined when the regularity condition fails; it
exists so classical reference problems such as a1 = a2 = d1 = 1 can be fed
to the forward solver.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AngleOrderViolation,
    InvalidInterval,
    OnInterface,
    RegularityViolation,
    ZeroParameter,
)

_ZERO_TOL = 1e-14


def _as_complex_samples(q, T, n):
    """Sample a potential onto the uniform grid used everywhere else."""
    xs = np.linspace(0.0, T, n)
    if q is None:
        return np.zeros(n, dtype=complex)
    if callable(q):
        vals = np.asarray([q(x) for x in xs], dtype=complex)
    else:
        vals = np.asarray(q, dtype=complex)
        if vals.shape != xs.shape:
            raise ValueError(f"potential samples must have length {n}, got {vals.shape}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("potential samples must be finite")
    return vals


@dataclass(frozen=True)
class ProblemSpec:
    """Full parameterization of a boundary value problem.

    The potential is stored as complex samples on the uniform grid
    ``linspace(0, T, q_values.size)`` and is interpreted piecewise-linearly
    between samples.
    """

    T: float
    b: float
    a1: complex
    a2: complex
    h: complex
    H: complex
    d1: complex
    d2: complex
    q_values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "b", float(self.b))
        for name in ("a1", "a2", "h", "H", "d1", "d2"):
            object.__setattr__(self, name, complex(getattr(self, name)))
        q = np.ascontiguousarray(self.q_values, dtype=complex)
        if q.ndim != 1 or q.size < 2:
            raise ValueError("q_values must be a 1-d array with at least two samples")
        q.setflags(write=False)
        object.__setattr__(self, "q_values", q)

    @classmethod
    def make(cls, T, b, a1, a2, h=0.0, H=0.0, d1=1.0, d2=0.0, q=None, q_samples=1001):
        """Build a spec, sampling ``q`` (callable, array or None) on the grid."""
        return cls(T=T, b=b, a1=a1, a2=a2, h=h, H=H, d1=d1, d2=d2,
                   q_values=_as_complex_samples(q, float(T), int(q_samples)))

    @property
    def q_step(self) -> float:
        return self.T / (self.q_values.size - 1)

    def q_at(self, x):
        """Piecewise-linear interpolation of the potential samples."""
        xs = np.asarray(x, dtype=float)
        step = self.q_step
        idx = np.clip((xs / step).astype(int), 0, self.q_values.size - 2)
        frac = xs / step - idx
        out = self.q_values[idx] * (1.0 - frac) + self.q_values[idx + 1] * frac
        return out if out.ndim else complex(out)

    def is_zero_potential(self) -> bool:
        return bool(np.all(self.q_values == 0.0))

    def replace_q(self, q, q_samples=None) -> "ProblemSpec":
        n = self.q_values.size if q_samples is None else int(q_samples)
        return ProblemSpec(T=self.T, b=self.b, a1=self.a1, a2=self.a2, h=self.h,
                           H=self.H, d1=self.d1, d2=self.d2,
                           q_values=_as_complex_samples(q, self.T, n))


@dataclass(frozen=True)
class DerivedConstants:
    """Closed-form quantities computed once from a validated spec.

    ``A_ratio``, ``C1`` and ``C2`` are None in relaxed mode when the
    regularity condition fails (omega_minus or omega_plus vanishes), since
    they involve the ratio omega_plus/omega_minus.
    """

    l1: float
    l2: float
    r1: float
    r2: float
    phi1: float
    phi2: float
    omega_plus: complex
    omega_minus: complex
    A_ratio: complex | None
    alpha: float
    C1: complex | None
    C2: complex | None
    sector_angles: tuple[float, float, float, float]
    strict: bool

    def ray_angle(self, branch: int) -> float:
        """Direction of the square-root-of-eigenvalue ray for a branch."""
        if branch == 1:
            return self.sector_angles[1]   # pi - phi1
        if branch == 2:
            return self.sector_angles[0]   # -phi2
        raise ValueError(f"branch must be 1 or 2, got {branch}")

    def lattice_step(self, branch: int) -> float:
        """Spacing pi / (r_j * l_j) of consecutive seeds along a branch ray."""
        if branch == 1:
            return math.pi / (self.r1 * self.l1)
        if branch == 2:
            return math.pi / (self.r2 * self.l2)
        raise ValueError(f"branch must be 1 or 2, got {branch}")

    def branch_offset(self, branch: int) -> complex:
        if self.C1 is None or self.C2 is None:
            from .errors import UndefinedConstants
            raise UndefinedConstants("asymptotic offsets undefined (regularity fails)")
        return self.C1 if branch == 1 else self.C2

    def theta_growth_rate(self) -> float:
        """Exponent rate of the second-branch rescaling weights.

        Equals pi*r1*l1/(r2*l2) * |sin(phi1 - phi2)|; under the strict angle
        ordering this is the -cos(alpha) form of the second-branch residue
        asymptotics, and the absolute value extends it to reflected problems
        where the ordering is reversed.
        """
        return math.pi * self.r1 * self.l1 / (self.r2 * self.l2) * \
            abs(math.sin(self.phi1 - self.phi2))


def transfer_matrix(d1: complex, d2: complex) -> np.ndarray:
    """Matrix mapping (y, y') at b-0 to (y, y') at b+0; determinant is one."""
    d1 = complex(d1)
    if d1 == 0:
        raise ZeroParameter("d1 must be nonzero")
    return np.array([[d1, 0.0], [complex(d2), 1.0 / d1]], dtype=complex)


def transfer_matrix_inverse(d1: complex, d2: complex) -> np.ndarray:
    """Exact inverse of the jump matrix (maps b+0 data back to b-0)."""
    d1 = complex(d1)
    if d1 == 0:
        raise ZeroParameter("d1 must be nonzero")
    return np.array([[1.0 / d1, 0.0], [-complex(d2), d1]], dtype=complex)


def reflect_spec(spec: ProblemSpec) -> ProblemSpec:
    """The problem seen from the right endpoint (x replaced by T - x).

    Layers and boundary constants swap, the jump scaling inverts (with the
    sign gauge restored to arg d1 in [0, pi)), and the value/derivative
    transfer matrix stays unimodular with the same coupling d2.
    """
    d1r, d2r = 1.0 / spec.d1, spec.d2
    if not (0.0 <= cmath.phase(d1r) < math.pi):
        # flipping the sign of the right-layer solutions is a gauge: it
        # negates both d1 and d2 and leaves all spectral data unchanged
        d1r, d2r = -d1r, -d2r
    return ProblemSpec(T=spec.T, b=spec.T - spec.b, a1=spec.a2, a2=spec.a1,
                       h=spec.H, H=spec.h, d1=d1r, d2=d2r,
                       q_values=np.ascontiguousarray(spec.q_values[::-1]))


def weight_at(spec: ProblemSpec, x: float) -> complex:
    """The weight a_k^2 on the layer containing x; undefined at x = b."""
    if x < 0.0 or x > spec.T:
        raise InvalidInterval(f"x = {x} outside [0, {spec.T}]")
    if x == spec.b:
        raise OnInterface("weight is two-valued at the jump point; evaluate one-sidedly")
    return spec.a1 ** 2 if x < spec.b else spec.a2 ** 2


def validate_problem(spec: ProblemSpec, mode: str = "strict") -> DerivedConstants:
    """Check the problem class constraints and return the derived constants.

    Raises InvalidInterval / ZeroParameter in both modes,
    AngleOrderViolation / RegularityViolation only in strict mode (relaxed
    mode downgrades them to warnings and may leave A_ratio, C1, C2 unset).
    """
    if mode not in ("strict", "relaxed"):
        raise ValueError(f"mode must be 'strict' or 'relaxed', got {mode!r}")
    strict = mode == "strict"

    if not (spec.T > 0.0) or not math.isfinite(spec.T):
        raise InvalidInterval(f"interval length T = {spec.T} must be positive")
    if not (0.0 < spec.b < spec.T):
        raise InvalidInterval(f"jump point b = {spec.b} must lie strictly inside (0, {spec.T})")
    if spec.a1 == 0 or spec.a2 == 0:
        raise ZeroParameter("weight amplitudes a1, a2 must be nonzero")
    if spec.d1 == 0:
        raise ZeroParameter("jump scaling d1 must be nonzero")

    arg_d1 = cmath.phase(spec.d1)
    if not (0.0 <= arg_d1 < math.pi):
        # The convention arg d1 in [0, pi) fixes the sign gauge of d1; the
        # caller can always flip the sign of d1 to comply.
        raise AngleOrderViolation(f"arg(d1) = {arg_d1:.6g} must lie in [0, pi)")

    l1 = spec.b
    l2 = spec.T - spec.b
    r1, phi1 = abs(spec.a1), cmath.phase(spec.a1)
    r2, phi2 = abs(spec.a2), cmath.phase(spec.a2)

    if strict and not (0.0 <= phi2 < phi1 < math.pi):
        raise AngleOrderViolation(
            f"strict mode requires 0 <= arg(a2) < arg(a1) < pi, got "
            f"arg(a1) = {phi1:.6g}, arg(a2) = {phi2:.6g}")

    omega_plus = spec.d1 * spec.a2 + spec.a1 / spec.d1
    omega_minus = spec.d1 * spec.a2 - spec.a1 / spec.d1
    omega_scale = abs(spec.d1 * spec.a2) + abs(spec.a1 / spec.d1)
    degenerate = (abs(omega_plus) <= _ZERO_TOL * omega_scale
                  or abs(omega_minus) <= _ZERO_TOL * omega_scale)

    if degenerate:
        if strict:
            raise RegularityViolation(
                f"regularity fails: omega_plus = {omega_plus:.6g}, "
                f"omega_minus = {omega_minus:.6g}")
        warnings.warn("regularity condition fails (omega_plus * omega_minus = 0); "
                      "asymptotic constants left undefined", stacklevel=2)
        A_ratio = C1 = C2 = None
    else:
        A_ratio = omega_plus / omega_minus
        C1 = -cmath.log(-omega_minus / omega_plus) / (2j * spec.a1 * l1)
        C2 = cmath.log(omega_plus / omega_minus) / (2j * spec.a2 * l2)
        if phi1 < phi2:
            # reversed angle ordering (e.g. reflected problems): the layer
            # whose exponential dominates swaps, flipping both offsets
            C1, C2 = -C1, -C2

    alpha = phi1 - phi2 + math.pi / 2.0
    sector_angles = (-phi2, math.pi - phi1, math.pi - phi2, -phi1)

    return DerivedConstants(
        l1=l1, l2=l2, r1=r1, r2=r2, phi1=phi1, phi2=phi2,
        omega_plus=omega_plus, omega_minus=omega_minus, A_ratio=A_ratio,
        alpha=alpha, C1=C1, C2=C2, sector_angles=sector_angles, strict=strict)


@dataclass(frozen=True)
class SpectralDatum:
    """One eigenvalue with its square root and Weyl coefficient.

    ``rho`` is the square root of ``lam`` chosen nearest the asymptotic ray
    of its branch; ``M`` is the residue of the Weyl function at ``lam``.
    """

    k: int
    branch: int
    lam: complex
    rho: complex
    M: complex


@dataclass(frozen=True)
class SpectralData:
    """Ordered eigenvalue/Weyl-coefficient data, branch-major."""

    data: tuple[SpectralDatum, ...]
    count_branch1: int
    count_branch2: int
    provenance: str = "computed"

    def __post_init__(self):
        object.__setattr__(self, "data", tuple(self.data))
        expected = [(1, k) for k in range(self.count_branch1)] + \
                   [(2, k) for k in range(self.count_branch2)]
        got = [(d.branch, d.k) for d in self.data]
        if got != expected:
            raise ValueError("spectral data must be branch-major with consecutive indices")

    def branch(self, j: int) -> tuple[SpectralDatum, ...]:
        return tuple(d for d in self.data if d.branch == j)

    def __len__(self) -> int:
        return len(self.data)

    def truncated(self, n_per_branch: int) -> "SpectralData":
        n1 = min(n_per_branch, self.count_branch1)
        n2 = min(n_per_branch, self.count_branch2)
        kept = [d for d in self.data if d.k < (n1 if d.branch == 1 else n2)]
        return SpectralData(tuple(kept), n1, n2, self.provenance)
