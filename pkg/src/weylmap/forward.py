"""Characteristic function, Weyl function and eigenvalue localization.

The characteristic function Delta(lam) = <phi, psi> vanishes exactly at the
eigenvalues.  High-index eigenvalues are found by Newton iteration on
rho = sqrt(lam) started from the asymptotic two-branch seeds; the low-lying
region (where the asymptotics are unreliable) is swept by an
argument-principle rectangle search in the lam-plane.  For zero-potential
problems the same machinery runs on the exact layer propagators instead of
the ODE integrator, which is both an oracle for tests and the model-problem
engine of the inverse pipeline.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from . import closedform, ode, zerosearch
from .config import DEFAULT_CONFIG, SolverConfig
from .errors import (
    CountMismatch,
    MultipleZeroDetected,
    NearEigenvalue,
    SeedDivergence,
    UndefinedConstants,
    ZeroParameter,
)
from .model import (
    DerivedConstants,
    ProblemSpec,
    SpectralData,
    SpectralDatum,
    validate_problem,
)


# ---------------------------------------------------------------------------
# characteristic function and Weyl function


def char_delta(spec: ProblemSpec, lam: complex,
               config: SolverConfig = DEFAULT_CONFIG, via: str = "phi") -> complex:
    """Delta(lam); computed as -V(phi) by default, as U(psi) when via='psi'."""
    if via == "phi":
        y = ode.endpoint_state(spec, lam, "phi", config=config)
        return -(y[1] + spec.H * y[0])
    if via == "psi":
        y = ode.endpoint_state(spec, lam, "psi", config=config)
        return y[1] - spec.h * y[0]
    raise ValueError("via must be 'phi' or 'psi'")


def delta0(spec: ProblemSpec, lam: complex,
           config: SolverConfig = DEFAULT_CONFIG, via: str = "psi") -> complex:
    """Delta_0(lam) = psi(0, lam); cross-checkable as V(S)."""
    if via == "psi":
        return complex(ode.endpoint_state(spec, lam, "psi", config=config)[0])
    if via == "S":
        y = ode.endpoint_state(spec, lam, "S", config=config)
        return complex(y[1] + spec.H * y[0])
    raise ValueError("via must be 'psi' or 'S'")


def weyl_M(spec: ProblemSpec, lam: complex,
           config: SolverConfig = DEFAULT_CONFIG) -> complex:
    """Weyl function M(lam) = Delta_0(lam) / Delta(lam)."""
    den = char_delta(spec, lam, config)
    num = delta0(spec, lam, config)
    if abs(den) < config.near_eigenvalue_rel * (abs(num) + abs(den)):
        raise NearEigenvalue(f"Delta({lam}) = {den}: too close to an eigenvalue")
    return num / den


# ---------------------------------------------------------------------------
# asymptotic formulas


@dataclass(frozen=True)
class AsymptoticSeed:
    k: int
    branch: int
    rho_seed: complex


def seed_rho(k: int, branch: int, consts: DerivedConstants) -> complex:
    """Leading-order location of the k-th square-root-of-eigenvalue on a branch."""
    C = consts.branch_offset(branch)
    step = consts.lattice_step(branch)
    return k * step * cmath.exp(1j * consts.ray_angle(branch)) + C


def asymptotic_seed(k: int, branch: int, consts: DerivedConstants) -> AsymptoticSeed:
    if k < 0:
        raise ValueError("seed index must be nonnegative")
    return AsymptoticSeed(k=k, branch=branch, rho_seed=seed_rho(k, branch, consts))


def asymptotic_weyl(k: int, branch: int, consts: DerivedConstants) -> complex:
    """Leading-order Weyl coefficient on each branch.

    The second-branch value carries the lattice-offset prefactor
    exp(2i a1 l1 C2) in addition to the exponential decay in k: computed
    residues settle on that constant multiple of the bare 8/(w- w+ l2)
    prefactor (the factor follows from evaluating exp(2i rho a1 l1) on the
    second-branch lattice rho = k pi/(a2 l2) + C2, whose k-part alone gives
    the exponential decay).
    """
    if consts.A_ratio is None:
        raise UndefinedConstants("Weyl asymptotics need the regularity condition")
    a1 = consts.r1 * cmath.exp(1j * consts.phi1)
    if branch == 1:
        return 2.0 / (a1 * a1 * consts.l1)
    om = consts.omega_minus * consts.omega_plus
    offset = cmath.exp(2j * a1 * consts.l1 * consts.C2)
    growth = 2.0 * k * math.pi * consts.r1 * consts.l1 / (consts.r2 * consts.l2)
    return (8.0 / (om * consts.l2)) * offset * cmath.exp(
        growth * (math.cos(consts.alpha) + 1j * math.sin(consts.alpha)))


def theta_weight(k: int, branch: int, consts: DerivedConstants) -> float:
    """Rescaling weight: 1 on branch 1, exponentially growing on branch 2."""
    if branch == 1:
        return 1.0
    return math.exp(k * consts.theta_growth_rate())


# ---------------------------------------------------------------------------
# evaluators feeding the localization engine


class OdeDeltaEvaluator:
    """Delta and its lambda-derivative through the variational ODE system."""

    def __init__(self, spec: ProblemSpec, config: SolverConfig):
        self.spec = spec
        self.config = config

    def value_deriv(self, lam: complex):
        st = ode.endpoint_state(self.spec, lam, "phi", variational=True,
                                config=self.config)
        d = -(st[1] + self.spec.H * st[0])
        dd = -(st[3] + self.spec.H * st[2])
        return d, dd

    def delta0(self, lam: complex) -> complex:
        return complex(ode.endpoint_state(self.spec, lam, "psi", config=self.config)[0])

    def weyl_residue(self, lam: complex, rho: complex | None = None) -> complex:
        """Residue of the Weyl function at the (simple) eigenvalue lam.

        Uses the normalization identity M_k = 1 / integral(r * phi_k^2):
        the textbook quotient Delta_0 / Delta' is mathematically identical
        but suffers an exponentially deep cancellation on the second
        eigenvalue branch, where the residues themselves decay like
        exp(-c k) while the solutions grow like exp(+c k / 2).
        """
        if rho is None:
            rho = cmath.sqrt(lam)
        return ode.weyl_norm_mu(self.spec, lam, rho, 0.0, self.config)

    def coarse(self) -> "OdeDeltaEvaluator":
        """Cheap variant for counting and bracketing (final polish stays tight)."""
        rt = max(self.config.ode_rtol, 1e-9)
        return OdeDeltaEvaluator(self.spec,
                                 self.config.with_updates(ode_rtol=rt, ode_atol=rt * 1e-2))


class Q0DeltaEvaluator:
    """Exact closed forms for zero-potential problems."""

    def __init__(self, spec: ProblemSpec, config: SolverConfig):
        if not spec.is_zero_potential():
            raise ValueError("closed-form evaluator requires q identically zero")
        self.spec = spec
        self.config = config

    def value_deriv(self, lam: complex):
        d, dd, _ = closedform.q0_delta(self.spec, lam)
        return d, dd

    def delta0(self, lam: complex) -> complex:
        return complex(closedform.q0_delta(self.spec, lam)[2])

    def weyl_residue(self, lam: complex, rho: complex | None = None) -> complex:
        if rho is None:
            rho = cmath.sqrt(lam)
        return closedform.q0_weyl_mu(self.spec, lam, rho, 0.0)

    def coarse(self) -> "Q0DeltaEvaluator":
        return self


# ---------------------------------------------------------------------------
# localization engine


def _relaxed_seed_lattice(spec: ProblemSpec, consts: DerivedConstants):
    """Single-lattice seeds for degenerate (relaxed-mode) weight data."""
    a1, a2 = spec.a1, spec.a2
    s_plus = a1 * consts.l1 + a2 * consts.l2
    s_minus = a2 * consts.l2 - a1 * consts.l1
    om_scale = abs(spec.d1 * a2) + abs(a1 / spec.d1)
    if abs(consts.omega_minus) <= 1e-14 * om_scale:
        if s_plus == 0:
            raise UndefinedConstants("degenerate layers: a1*l1 + a2*l2 = 0")
        return lambda k: k * math.pi / s_plus
    if abs(consts.omega_plus) <= 1e-14 * om_scale:
        if s_minus == 0:
            raise UndefinedConstants("degenerate layers: a2*l2 = a1*l1 with omega_plus = 0")
        return lambda k: k * math.pi / s_minus
    return None


def _newton_rho(evaluator, rho0: complex, config: SolverConfig,
                max_drift: float) -> complex:
    """Newton iteration for Delta(rho^2) = 0 starting at rho0.

    Runs the bulk of the iteration on the cheap evaluator and finishes with
    a couple of steps at full tolerance (quadratic convergence makes the
    final polish essentially free).
    """
    rho = complex(rho0)
    coarse = evaluator.coarse()
    coarse_tol = max(config.newton_tol, 1e-8)

    def _steps(ev, tol, maxiter):
        nonlocal rho
        for _ in range(maxiter):
            d, dd = ev.value_deriv(rho * rho)
            g = 2.0 * rho * dd
            if g == 0:
                raise SeedDivergence(f"vanishing derivative at rho = {rho}")
            step = d / g
            rho = rho - step
            if abs(rho - rho0) > max_drift:
                raise SeedDivergence(
                    f"Newton drifted {abs(rho - rho0):.3g} from seed {rho0:.6g}")
            if abs(step) <= tol * (1.0 + abs(rho)):
                return True
        return False

    if not _steps(coarse, coarse_tol, config.newton_maxiter):
        raise SeedDivergence(f"Newton did not converge from seed {rho0:.6g}")
    if coarse is not evaluator:
        # a few full-tolerance steps; quadratic convergence reaches the
        # evaluation noise floor immediately, so step sizes may stagnate
        # slightly above newton_tol without signalling failure
        last = math.inf
        for _ in range(5):
            d, dd = evaluator.value_deriv(rho * rho)
            g = 2.0 * rho * dd
            if g == 0:
                raise SeedDivergence(f"vanishing derivative at rho = {rho}")
            step = d / g
            rho = rho - step
            last = abs(step)
            if last <= config.newton_tol * (1.0 + abs(rho)):
                break
        if last > 1e-8 * (1.0 + abs(rho)):
            raise SeedDivergence(f"tight polish stalled near {rho:.6g} (step {last:.3g})")
        if abs(rho - rho0) > max_drift:
            raise SeedDivergence(f"polished root drifted from seed {rho0:.6g}")
    return rho


def _newton_lam(evaluator, lam0: complex, config: SolverConfig) -> complex:
    """Short full-tolerance Newton polish in the lam-plane."""
    lam = complex(lam0)
    for _ in range(8):
        d, dd = evaluator.value_deriv(lam)
        if dd == 0:
            break
        step = d / dd
        lam = lam - step
        if abs(step) <= config.newton_tol * (1.0 + abs(lam)):
            break
    return lam


def _ray_distance(rho: complex, branch: int, consts: DerivedConstants) -> float:
    """Distance from rho to the (offset) asymptotic half-line of a branch."""
    C = consts.branch_offset(branch)
    direction = cmath.exp(1j * consts.ray_angle(branch))
    w = (rho - C) / direction
    if w.real >= 0.0:
        return abs(w.imag)
    return abs(w)


def classify_branch(lam: complex, consts: DerivedConstants):
    """Pick (rho, branch) with rho the square root nearest its branch ray."""
    rho_p = cmath.sqrt(lam)
    best = None
    for cand in (rho_p, -rho_p):
        for branch in (1, 2):
            dist = _ray_distance(cand, branch, consts)
            key = (dist, branch, cand.real, cand.imag)
            if best is None or key < best[0]:
                best = (key, cand, branch)
    return best[1], best[2]


def classify_by_seed(lam: complex, consts: DerivedConstants, k_max: int = 400):
    """Classification by nearest asymptotic seed (cross-check variant)."""
    rho_p = cmath.sqrt(lam)
    best = None
    for cand in (rho_p, -rho_p):
        for branch in (1, 2):
            step = consts.lattice_step(branch)
            C = consts.branch_offset(branch)
            direction = cmath.exp(1j * consts.ray_angle(branch))
            t = ((cand - C) / direction).real
            k = min(max(round(t / step), 0), k_max)
            for kk in (k - 1, k, k + 1):
                if kk < 0:
                    continue
                d = abs(cand - (C + kk * step * direction))
                if best is None or d < best[0]:
                    best = (d, cand, branch)
    return best[1], best[2]


def _dedup(lams, tol_rel):
    kept: list[complex] = []
    for lam in sorted(lams, key=lambda z: (abs(z), z.real, z.imag)):
        if all(abs(lam - other) > tol_rel * (1.0 + abs(other)) for other in kept):
            kept.append(lam)
    return kept


def _locate(evaluator, spec, consts, n_per_branch, config, merged):
    """Shared seed+Newton / rectangle localization.

    ``merged`` selects the relaxed single-branch output; otherwise zeros are
    classified onto the two asymptotic branches.
    """
    K0 = min(config.crossover_index, max(n_per_branch - 1, 0))

    if merged:
        lattice = _relaxed_seed_lattice(spec, consts)
        if lattice is not None:
            def seeds_for(_branch, k):
                return complex(lattice(k))
            branch_list = (1,)
        elif consts.C1 is not None:
            def seeds_for(branch, k):
                return seed_rho(k, branch, consts)
            branch_list = (1, 2)
        else:
            raise UndefinedConstants("cannot seed the search: constants undefined")
    else:
        def seeds_for(branch, k):
            return seed_rho(k, branch, consts)
        branch_list = (1, 2)

    # low-region rectangle radius: cover every seed up to the crossover index
    radius = 0.0
    for branch in branch_list:
        spacing = abs(seeds_for(branch, K0 + 1) - seeds_for(branch, K0))
        radius = max(radius, abs(seeds_for(branch, K0))
                     + config.rectangle_margin * spacing)
    lam_radius = radius * radius

    coarse = evaluator.coarse()

    def f_coarse(lam):
        return coarse.value_deriv(lam)

    rect = (-lam_radius, lam_radius, -lam_radius, lam_radius)
    low_zeros = zerosearch.find_zeros_in_rectangle(f_coarse, rect, config)
    if coarse is not evaluator:
        low_zeros = [_newton_lam(evaluator, z, config) for z in low_zeros]

    # seed refinement above the crossover
    feasible: list[complex] = []
    for branch in branch_list:
        for k in range(K0 + 1, n_per_branch + 2):
            rho0 = seeds_for(branch, k)
            spacing = abs(seeds_for(branch, k + 1) - rho0)
            rho = _newton_rho(evaluator, rho0, config, max_drift=0.75 * spacing)
            feasible.append(rho * rho)

    zeros = _dedup(list(low_zeros) + feasible, tol_rel=1e-9)

    # branch assignment and per-branch ordering
    if merged:
        groups = {1: [], 2: []}
        for lam in zeros:
            rho = cmath.sqrt(lam)
            if rho.real < 0 or (rho.real == 0 and rho.imag < 0):
                rho = -rho
            groups[1].append((lam, rho))
    else:
        groups = {1: [], 2: []}
        for lam in zeros:
            rho, branch = classify_branch(lam, consts)
            groups[branch].append((lam, rho))

    out = []
    counts = {}
    need = {1: n_per_branch, 2: 0 if merged else n_per_branch}
    for branch in (1, 2):
        entries = sorted(groups[branch], key=lambda t: (abs(t[1]), t[1].real, t[1].imag))
        if len(entries) < need[branch]:
            raise CountMismatch(
                f"branch {branch}: located {len(entries)} zeros, "
                f"need {need[branch]}; widen the search")
        entries = entries[:n_per_branch]
        counts[branch] = len(entries)
        for k, (lam, rho) in enumerate(entries):
            out.append((branch, k, lam, rho))

    # simplicity certification and Weyl coefficients
    all_l = [lam for _, _, lam, _ in out]
    data: list[SpectralDatum] = []
    for branch, k, lam, rho in out:
        _, dd = evaluator.value_deriv(lam)
        others = [o for o in all_l if o != lam]
        nearest = min(others, key=lambda o: abs(o - lam)) if others else lam + 1.0
        mid = 0.5 * (lam + nearest)
        slope_scale = abs(coarse.value_deriv(mid)[0]) / max(abs(mid - lam), 1e-300)
        if abs(dd) < config.simplicity_rel * slope_scale:
            raise MultipleZeroDetected(
                f"|Delta'({lam:.6g})| = {abs(dd):.3g} below the simplicity "
                f"threshold {config.simplicity_rel * slope_scale:.3g}")
        M = evaluator.weyl_residue(lam, rho)
        data.append(SpectralDatum(k=k, branch=branch, lam=complex(lam),
                                  rho=complex(rho), M=complex(M)))

    data.sort(key=lambda s: (s.branch, s.k))
    return SpectralData(tuple(data), counts.get(1, 0), counts.get(2, 0), "computed")


def locate_eigenvalues(spec: ProblemSpec, n_per_branch: int,
                       config: SolverConfig = DEFAULT_CONFIG,
                       mode: str = "strict") -> SpectralData:
    """Eigenvalues and Weyl coefficients through the ODE integrator.

    Strict mode labels the two asymptotic branches; relaxed mode returns a
    single merged branch (branch index 1).
    """
    consts = validate_problem(spec, mode)
    evaluator = OdeDeltaEvaluator(spec, config)
    return _locate(evaluator, spec, consts, n_per_branch, config,
                   merged=(mode == "relaxed"))


def closed_form_spectrum_q0(spec: ProblemSpec, n_per_branch: int,
                            config: SolverConfig = DEFAULT_CONFIG,
                            mode: str = "strict") -> SpectralData:
    """Same output as locate_eigenvalues but on exact zero-potential formulas."""
    if not spec.is_zero_potential():
        raise ZeroParameter("closed_form_spectrum_q0 requires q identically zero")
    consts = validate_problem(spec, mode)
    evaluator = Q0DeltaEvaluator(spec, config)
    return _locate(evaluator, spec, consts, n_per_branch, config,
                   merged=(mode == "relaxed"))


def weyl_coefficient(spec: ProblemSpec, lam_k: complex,
                     config: SolverConfig = DEFAULT_CONFIG) -> complex:
    """Residue of the Weyl function at a (simple) eigenvalue lam_k.

    Evaluated through the eigenfunction normalization integral (see
    OdeDeltaEvaluator.weyl_residue); equal to Delta_0(lam_k)/Delta'(lam_k).
    """
    evaluator = OdeDeltaEvaluator(spec, config)
    _, dd = evaluator.value_deriv(lam_k)
    probe = lam_k + 1e-3 * (1.0 + abs(lam_k))
    slope_scale = abs(evaluator.value_deriv(probe)[0]) / abs(probe - lam_k)
    if abs(dd) < config.simplicity_rel * slope_scale:
        raise MultipleZeroDetected(f"Delta'({lam_k}) too small: {dd}")
    return evaluator.weyl_residue(lam_k)
