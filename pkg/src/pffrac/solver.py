"""Per-field Newton solves and the alternating-minimization loop.

Each load step alternates an equilibrium solve at fixed damage with a
semi-smooth Newton solve of the penalized damage problem at fixed
displacement, until both field increments stagnate in the max norm.  The
damage solve treats the negative-part penalty with an active-set generalized
derivative (1 where the irreversibility gap is negative, 0 elsewhere).

Both subproblems are convex but only piecewise smooth: the split energy has
gradient jumps where a principal strain changes sign, and uniaxial tension
states minimize exactly on such a kink.  Full Newton steps can therefore
cycle across the kink, so every update is safeguarded by an Armijo
backtracking line search on the subproblem energy (whose exact gradient the
assembled residual is, branch-wise).  An iterate where no step along the
Newton direction can decrease the energy is a numerical minimizer of the
convex subproblem and counts as converged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energetics import erg, functional_from_psi, total_functional
from .fem import (
    DofMap,
    ElementKernels,
    element_psi_split,
    residual_and_tangent_beta,
    residual_and_tangent_u,
)
from .linsolve import LinearSolveError, factor_solve
from .material import MaterialParams

__all__ = ["SolverConfig", "AltResult", "StepFailure", "newton_u", "newton_beta", "alternate_minimize"]

_ARMIJO_C = 1e-4
_ARMIJO_MIN_STEP = 2.0**-30


@dataclass(frozen=True)
class SolverConfig:
    """Iteration control: max-norm increment tolerances and caps."""

    tol_u: float = 1e-5
    tol_a: float = 1e-5
    max_newton: int = 100
    max_alt: int = 1000
    clamp_damage: bool = True

    def __post_init__(self):
        if self.tol_u <= 0.0 or self.tol_a <= 0.0:
            raise ValueError("tolerances must be > 0")
        if self.max_newton < 1 or self.max_alt < 1:
            raise ValueError("iteration caps must be >= 1")


class StepFailure(RuntimeError):
    """A Newton or alternation loop failed; carries the best state so far."""

    def __init__(self, message: str, u=None, a=None):
        super().__init__(message)
        self.u = u
        self.a = a


@dataclass
class AltResult:
    """Converged state of one incremental solve, with iteration traces."""

    u: np.ndarray
    a: np.ndarray
    alt_iters: int
    newton_iters_u: int
    newton_iters_beta: int
    functional_trace: list = field(default_factory=list)
    clamp_max: float = 0.0


def _box_newton(x0, system_fn, merit_fn, tol, max_newton, label, bounds=None):
    """Line-search-safeguarded (projected) Newton on a convex piecewise-smooth
    energy, optionally subject to box constraints.

    ``system_fn(x)`` returns the (residual, tangent) pair in one evaluation.
    Every applied increment must pass an Armijo test on the energy, so the
    iteration is strictly non-increasing; with bounds, dofs pinned at a bound
    with an outward-pushing gradient are frozen out of the Newton system and
    trial states follow the projection arc.  Returns (x, iterations).
    Convergence: the applied increment max norm drops to ``tol``, or no
    energy descent is achievable along the Newton direction (nonsmooth
    minimizer).
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    if x.size == 0:
        return x, 1
    if bounds is not None:
        lo, hi = bounds
        x = np.clip(x, lo, hi)

    def project(v):
        return np.clip(v, lo, hi) if bounds is not None else v

    for k in range(1, max_newton + 1):
        r, mat = system_fn(x)
        if bounds is not None:
            pinned = ((x <= lo) & (r > 0.0)) | ((x >= hi) & (r < 0.0))
            free = np.flatnonzero(~pinned)
        else:
            free = None

        dx = np.zeros_like(x)
        try:
            if free is None:
                dx = factor_solve(mat, -r)
                slope = float(np.dot(r, dx))  # -r^T K^{-1} r <= 0 for SPD tangents
            elif free.size:
                dx[free] = factor_solve(mat[free][:, free], -r[free])
                slope = float(np.dot(r[free], dx[free]))
            else:
                return x, k  # every dof pinned at a bound
        except LinearSolveError as exc:
            raise StepFailure(f"{label} linear solve failed: {exc}") from exc

        e0 = merit_fn(x)
        t = 1.0
        x_new = x
        while t >= _ARMIJO_MIN_STEP:
            trial = project(x + t * dx)
            if merit_fn(trial) <= e0 + _ARMIJO_C * t * slope:
                x_new = trial
                break
            t *= 0.5
        else:
            # no descent along the Newton direction: kink minimizer reached
            return x, k
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        if step <= tol:
            return x, k
    raise StepFailure(f"{label}: no convergence in {max_newton} iterations")


def newton_u(
    u0: np.ndarray,
    u_d: np.ndarray,
    a_fixed: np.ndarray,
    kernels: ElementKernels,
    p: MaterialParams,
    cfg: SolverConfig,
    dofmap: DofMap,
):
    """Damped Newton on the displacement residual at fixed damage.

    Returns (u, iterations).  The free vector keeps zeros on constrained
    dofs; the merit function is the degraded bulk energy.
    """
    u = np.array(u0, dtype=np.float64, copy=True)
    u[dofmap.fixed] = 0.0
    free = dofmap.free

    def expand(x):
        full = u.copy()
        full[free] = x
        return full

    try:
        x, iters = _box_newton(
            u[free],
            lambda x: residual_and_tangent_u(expand(x), u_d, a_fixed, kernels, p, dofmap),
            lambda x: erg(expand(x), u_d, a_fixed, kernels, p),
            cfg.tol_u,
            cfg.max_newton,
            "newton_u",
        )
    except StepFailure as exc:
        exc.u, exc.a = u, a_fixed
        raise
    u[free] = x
    return u, iters


def newton_beta(
    a0: np.ndarray,
    u_fixed: np.ndarray,
    u_d: np.ndarray,
    a_n: np.ndarray,
    kernels: ElementKernels,
    p: MaterialParams,
    cfg: SolverConfig,
):
    """Semi-smooth Newton on the penalized damage residual at fixed
    displacement.

    Returns (a, iterations, clamp_magnitude).  With ``cfg.clamp_damage`` the
    simple bounds [0, 1] are enforced inside the solve (projected active-set
    Newton, so the discrete overshoot of the unconstrained minimizer above 1
    near a localized crack never enters the state) and the reported clamp
    magnitude is zero; without it the solve is unconstrained and the clamp
    magnitude reports the violation of [0, 1] for the driver's safety check.
    """
    # the displacement is frozen, so the split energy densities are reusable
    psi_p, psi_m = element_psi_split(kernels, u_fixed + u_d, p)
    try:
        a, iters = _box_newton(
            a0,
            lambda x: residual_and_tangent_beta(psi_p, x, a_n, kernels, p),
            lambda x: functional_from_psi(psi_p, psi_m, x, a_n, kernels, p),
            cfg.tol_a,
            cfg.max_newton,
            "newton_beta",
            bounds=(0.0, 1.0) if cfg.clamp_damage else None,
        )
    except StepFailure as exc:
        exc.u, exc.a = u_fixed, a0
        raise
    clamp = 0.0
    if a.size:
        clamp = float(np.max(np.maximum(a - 1.0, 0.0) + np.maximum(-a, 0.0)))
    return a, iters, clamp


def alternate_minimize(
    u_start: np.ndarray,
    a_start: np.ndarray,
    a_n: np.ndarray,
    u_d_next: np.ndarray,
    kernels: ElementKernels,
    p: MaterialParams,
    cfg: SolverConfig,
    dofmap: DofMap,
) -> AltResult:
    """Alternate the two Newton solves until both increments stagnate.

    ``(u_start, a_start)`` is the initial guess, which under backtracking
    differs from the admissible-set anchor ``a_n`` (the previous converged
    damage of the step being solved).
    """
    u = np.array(u_start, dtype=np.float64, copy=True)
    u[dofmap.fixed] = 0.0
    a = np.array(a_start, dtype=np.float64, copy=True)

    iters_u = 0
    iters_b = 0
    clamp_max = 0.0
    trace: list = []

    for i in range(1, cfg.max_alt + 1):
        u_new, nu = newton_u(u, u_d_next, a, kernels, p, cfg, dofmap)
        a_new, nb, clamp = newton_beta(a, u_new, u_d_next, a_n, kernels, p, cfg)
        iters_u += nu
        iters_b += nb
        clamp_max = max(clamp_max, clamp)
        trace.append(total_functional(u_new, u_d_next, a_new, a_n, kernels, p))

        du = float(np.max(np.abs(u_new - u))) if u.size else 0.0
        da = float(np.max(np.abs(a_new - a))) if a.size else 0.0
        u, a = u_new, a_new
        if du <= cfg.tol_u and da <= cfg.tol_a:
            return AltResult(
                u=u,
                a=a,
                alt_iters=i,
                newton_iters_u=iters_u,
                newton_iters_beta=iters_b,
                functional_trace=trace,
                clamp_max=clamp_max,
            )
    raise StepFailure(f"alternate_minimize: no convergence in {cfg.max_alt} alternations", u=u, a=a)
