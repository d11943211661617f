"""Tunable solver parameters with their documented defaults."""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace


@dataclass(frozen=True)
class SolverConfig:
    # ODE integration
    ode_rtol: float = 2e-13          # local relative tolerance of the stepper
    ode_atol: float = 1e-14          # local absolute tolerance floor
    grid_points: int = 201           # shared x-grid for traces and the inverse solve
    q_samples: int = 1001            # uniform potential sampling

    # Eigenvalue localization
    crossover_index: int = 5         # last index handled by the rectangle search
    newton_maxiter: int = 40
    newton_tol: float = 1e-13        # relative step-size stopping criterion
    simplicity_rel: float = 1e-8     # |Delta'| threshold scale for simple zeros
    winding_integer_tol: float = 0.1
    winding_max_refine: int = 10
    rectangle_margin: float = 0.5    # extra seed spacings around the search box

    # Weyl function / kernels
    near_eigenvalue_rel: float = 1e-10
    dkernel_switch: float = 1e-4     # |lam - mu| < switch*(1+|lam|) -> integral form

    # Inverse problem
    truncation: int = 40             # retained eigenvalues per branch
    xi_drop: float = 1e-12           # xi_k < xi_drop*(1+|rho_k|) -> index dropped
    cond_limit: float = 1e12         # condition estimate above this -> SingularSystem
    recover_passes: int = 3          # bootstrap rounds for tail-corrected recovery
    tail_terms: int = 20000          # asymptotic pole-tail summation length
    verify_modes: int = 20           # eigenvalues re-solved for the residual report

    def asdict(self) -> dict:
        return asdict(self)

    def with_updates(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


DEFAULT_CONFIG = SolverConfig()
