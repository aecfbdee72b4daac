"""Discrete energies, dissipation, and the two-sided energy inequality.

All quantities are quadrature sums over the mesh (N*mm), accumulated with
compensated summation: the inequality compares small differences of large
numbers against an absolute tolerance eta.

The stored energy of a state is ERG (degraded bulk energy of U1 + U2) plus
GRAD (the damage-gradient energy); DIS is the path-independent dissipation
state function whose difference gives the incremental dissipation.  The
upper/lower bounds are pure ERG differences (the gradient term cancels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fem import ElementKernels, beta_at_qp, strain_voigt
from .material import AT2, MaterialParams, degradation, psi_split, strain_tensor_from_voigt

__all__ = [
    "EnergyReport",
    "erg",
    "grad_term",
    "dis",
    "dissipation_increment",
    "penalty_energy",
    "total_functional",
    "upper_bound",
    "lower_bound",
    "check_two_sided",
]


@dataclass
class EnergyReport:
    """Per-step energy audit of the two-sided inequality."""

    step: int
    e_next: float
    e_curr: float
    d_inc: float
    delta: float
    lb: float
    ub: float
    eta: float
    passed: bool


def _fsum(values: np.ndarray) -> float:
    return math.fsum(values.tolist())


def erg_from_psi(psi_p, psi_m, a, kernels: ElementKernels, p: MaterialParams) -> float:
    """Degraded bulk energy from precomputed element energy densities."""
    r_qp, _ = degradation(beta_at_qp(kernels, a), p)
    rw = np.einsum("eq,eq->e", kernels.wj, r_qp)
    return _fsum(rw * psi_p + kernels.measures * psi_m)


def erg(u1, u2, a, kernels: ElementKernels, p: MaterialParams) -> float:
    """Degraded bulk energy of the displacement u1 + u2 with damage a."""
    eps = strain_tensor_from_voigt(strain_voigt(kernels, u1 + u2), kernels.dim)
    psi_p, psi_m = psi_split(eps, p)
    return erg_from_psi(psi_p, psi_m, a, kernels, p)


def grad_term(a, kernels: ElementKernels, p: MaterialParams) -> float:
    """Damage-gradient energy (gc*ell/2) * integral |grad beta|^2."""
    g = np.einsum("edi,ei->ed", kernels.b_beta, a[kernels.elements])
    return 0.5 * p.gc * p.ell * _fsum(kernels.measures * np.einsum("ed,ed->e", g, g))


def dis(a, kernels: ElementKernels, p: MaterialParams) -> float:
    """Dissipation state function: quadratic (AT2) or linear (AT1) in beta."""
    beta_qp = beta_at_qp(kernels, a)
    if p.dissipation == AT2:
        per_e = np.einsum("eq,eq->e", kernels.wj, beta_qp * beta_qp)
        return 0.5 * p.gc / p.ell * _fsum(per_e)
    per_e = np.einsum("eq,eq->e", kernels.wj, beta_qp)
    return p.kappa * p.gc / p.ell * _fsum(per_e)


def dissipation_increment(a_n, a_next, kernels: ElementKernels, p: MaterialParams) -> float:
    """Incremental dissipation dis(a_next) - dis(a_n).

    A value below -1e-8*(1 + dis(a_n)) indicates an irreversibility
    violation (penalty factor too large); the driver reports it.
    """
    return dis(a_next, kernels, p) - dis(a_n, kernels, p)


def penalty_energy(a, a_n, kernels: ElementKernels, p: MaterialParams) -> float:
    """Irreversibility penalty (1/(2 eps)) * integral [beta - beta_n]_-^2,
    the potential whose gradient is the penalty residual term."""
    gap_qp = (a - a_n)[kernels.elements] @ kernels.shape_qp.T
    neg = np.minimum(gap_qp, 0.0)
    per_e = np.einsum("eq,eq->e", kernels.wj, neg * neg)
    return 0.5 / p.eps_pen * _fsum(per_e)


def total_functional(u, u_d, a, a_n, kernels: ElementKernels, p: MaterialParams) -> float:
    """Penalized incremental functional: stored energy + incremental
    dissipation + irreversibility penalty (the quantity the alternating
    minimization descends on)."""
    return (
        erg(u, u_d, a, kernels, p)
        + grad_term(a, kernels, p)
        + dissipation_increment(a_n, a, kernels, p)
        + penalty_energy(a, a_n, kernels, p)
    )


def functional_from_psi(psi_p, psi_m, a, a_n, kernels: ElementKernels, p: MaterialParams) -> float:
    """``total_functional`` at fixed displacement, from precomputed element
    energy densities (avoids re-evaluating the spectral split)."""
    return (
        erg_from_psi(psi_p, psi_m, a, kernels, p)
        + grad_term(a, kernels, p)
        + dissipation_increment(a_n, a, kernels, p)
        + penalty_energy(a, a_n, kernels, p)
    )


def upper_bound(u_n, u_d_n, u_d_next, a_n, kernels: ElementKernels, p: MaterialParams) -> float:
    """UB: lifting increment evaluated on the current state."""
    return erg(u_n, u_d_next, a_n, kernels, p) - erg(u_n, u_d_n, a_n, kernels, p)


def lower_bound(
    u_next,
    u_d_n,
    u_d_next,
    a_next,
    kernels: ElementKernels,
    p: MaterialParams,
    compat_box1: bool = False,
) -> float:
    """LB: lifting increment evaluated on the next state.

    ``compat_box1`` switches the second term to the alternative input pairing
    (both liftings summed, no free vector) kept for cross-checking; the
    default pairing is the proved bound.
    """
    e1 = erg(u_next, u_d_next, a_next, kernels, p)
    if compat_box1:
        e2 = erg(u_d_next, u_d_n, a_next, kernels, p)
    else:
        e2 = erg(u_next, u_d_n, a_next, kernels, p)
    return e1 - e2


def check_two_sided(
    step: int,
    u_n,
    u_d_n,
    a_n,
    u_next,
    u_d_next,
    a_next,
    kernels: ElementKernels,
    p: MaterialParams,
    eta: float,
    compat_box1: bool = False,
) -> EnergyReport:
    """Evaluate the two-sided inequality LB - eta <= dE + D <= UB + eta for
    the step pair (n, n+1)."""
    if eta <= 0.0:
        raise ValueError("eta must be > 0")
    e_next = erg(u_next, u_d_next, a_next, kernels, p) + grad_term(a_next, kernels, p)
    e_curr = erg(u_n, u_d_n, a_n, kernels, p) + grad_term(a_n, kernels, p)
    d_inc = dissipation_increment(a_n, a_next, kernels, p)
    delta = e_next - e_curr + d_inc
    ub = upper_bound(u_n, u_d_n, u_d_next, a_n, kernels, p)
    lb = lower_bound(u_next, u_d_n, u_d_next, a_next, kernels, p, compat_box1=compat_box1)
    passed = (lb - eta <= delta) and (delta <= ub + eta)
    return EnergyReport(
        step=step,
        e_next=e_next,
        e_curr=e_curr,
        d_inc=d_inc,
        delta=delta,
        lb=lb,
        ub=ub,
        eta=eta,
        passed=bool(passed),
    )
