"""Quasi-static load stepping with two-sided-energy backtracking.

Each increment is solved by alternating minimization started from the last
computed state.  When the accepted pair violates the two-sided energy
inequality, the driver walks back one step at a time, re-solving earlier
increments with the discarded future state as initial guess (both fields),
until the inequality is met or the back-step budget K is exhausted; forward
traversal then resumes through the revisited steps, replacing their stored
states.  K = 0 disables the mechanism entirely (plain staggered stepping).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energetics import EnergyReport, check_two_sided, dis
from .fem import DofMap, ElementKernels, build_kernels, reaction_force
from .material import MaterialParams
from .mesh import Mesh
from .solver import AltResult, SolverConfig, StepFailure, alternate_minimize

__all__ = [
    "DirichletSpec",
    "LoadProgram",
    "BacktrackConfig",
    "StepRecord",
    "BacktrackEvent",
    "IntermediateRecord",
    "RunHistory",
    "build_dofmap",
    "lifting_for_step",
    "run",
]

# A run aborts when the post-convergence damage clamp ever exceeds this.
CLAMP_ABORT = 1e-3

# Reported D_inc below -1e-8*(1 + dis(A_n)) flags an irreversibility
# violation (penalty factor too large for the step).
_DISS_REL_TOL = 1e-8


@dataclass(frozen=True)
class DirichletSpec:
    """One constrained displacement component on a tagged node set.

    The prescribed value at step n is ``scale * w(n)``; homogeneous
    conditions use scale 0.
    """

    node_set: str
    component: int
    scale: float = 0.0


@dataclass(frozen=True)
class LoadProgram:
    """Monotone displacement-controlled schedule: w(n) = n * dw."""

    n_steps: int
    dw: float
    bcs: tuple

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    def w(self, n: int) -> float:
        return n * self.dw


@dataclass(frozen=True)
class BacktrackConfig:
    """Back-step budget K (0 disables backtracking) and energy tolerance."""

    k_max: int = 50
    eta: float = 1e-5

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if self.eta <= 0.0:
            raise ValueError("eta must be > 0")


@dataclass
class StepRecord:
    """Accepted state of one load step."""

    step: int
    w: float
    u: np.ndarray
    a: np.ndarray
    report: EnergyReport | None
    reaction: float = 0.0
    alt_iters: int = 0
    newton_iters_u: int = 0
    newton_iters_beta: int = 0
    clamp_max: float = 0.0
    irreversibility_violation: bool = False
    functional_trace: list = field(default_factory=list)
    guess_u: np.ndarray | None = None
    guess_a: np.ndarray | None = None


@dataclass
class BacktrackEvent:
    """One back step: the failing target and the step being re-solved."""

    failed_step: int
    resolved_step: int
    b: int


@dataclass
class IntermediateRecord:
    """A solve produced during backtracking (kept for the zigzag curves)."""

    target_step: int
    w: float
    b: int
    passed: bool
    delta: float
    lb: float
    ub: float
    reaction: float = 0.0
    u: np.ndarray | None = None
    a: np.ndarray | None = None


@dataclass
class RunHistory:
    """Accepted states plus backtracking provenance."""

    steps: list = field(default_factory=list)
    backtracks: list = field(default_factory=list)
    intermediates: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""

    @property
    def n_accepted(self) -> int:
        return len(self.steps) - 1  # steps[0] is the initial state

    @property
    def k_exhausted_steps(self) -> list:
        """Accepted steps whose two-sided inequality still fails (budget K
        exhausted, or K = 0); derived from the final records so replacements
        during backtracking cannot leave stale flags."""
        return [r.step for r in self.steps[1:] if r.report is not None and not r.report.passed]

    @property
    def irreversibility_steps(self) -> list:
        """Accepted steps whose incremental dissipation is negative beyond
        the reporting tolerance (penalty factor too large)."""
        return [r.step for r in self.steps[1:] if r.irreversibility_violation]


def build_dofmap(mesh: Mesh, program: LoadProgram) -> DofMap:
    """Dof partition induced by the program's Dirichlet specs."""
    constraints = []
    for bc in program.bcs:
        if bc.node_set not in mesh.node_sets:
            raise KeyError(f"unknown node set {bc.node_set!r}")
        constraints.append((mesh.node_sets[bc.node_set], bc.component))
    return DofMap.from_constraints(mesh, constraints)


def lifting_for_step(program: LoadProgram, n: int, mesh: Mesh) -> np.ndarray:
    """Dirichlet lifting vector at step n: prescribed values on constrained
    dofs, zero on free dofs."""
    if not 0 <= n <= program.n_steps:
        raise ValueError(f"step {n} outside 0..{program.n_steps}")
    u_d = np.zeros(mesh.dim * mesh.n_nodes)
    w = program.w(n)
    for bc in program.bcs:
        if bc.node_set not in mesh.node_sets:
            raise KeyError(f"unknown node set {bc.node_set!r}")
        dofs = mesh.dim * mesh.node_sets[bc.node_set] + bc.component
        u_d[dofs] = bc.scale * w
    return u_d


def run(
    program: LoadProgram,
    bt: BacktrackConfig,
    cfg: SolverConfig,
    p: MaterialParams,
    mesh: Mesh,
    reaction: tuple | None = None,
    compat_box1: bool = False,
    store_guesses: bool = False,
    store_intermediate_fields: bool = False,
    on_accept=None,
) -> RunHistory:
    """Execute the load program with energy-bound backtracking.

    Parameters
    ----------
    reaction : (set_tag, direction) or None
        Work-conjugate reaction recorded per accepted step.
    on_accept : callable, optional
        ``on_accept(history)`` invoked after every acceptance (incremental
        output writers).
    store_guesses : bool
        Keep the initial-guess vectors of each accepted solve (replay audit).
    """
    kernels = build_kernels(mesh)
    dofmap = build_dofmap(mesh, program)
    history = RunHistory()

    u0 = np.zeros(dofmap.n_dofs)
    a0 = np.zeros(mesh.n_nodes)
    history.steps.append(StepRecord(step=0, w=0.0, u=u0, a=a0, report=None))
    if reaction is not None:
        tag, direction = reaction
        history.steps[0].reaction = reaction_force(
            u0, lifting_for_step(program, 0, mesh), a0, kernels, p, tag, direction
        )

    guess_u = u0
    guess_a = a0
    n = 0
    # Back-step budget consumed per failing target step.  The budget is
    # cumulative across failure rounds of the same target: a re-solved
    # earlier step can pass while the same forward step keeps failing with
    # an unchanged guess, and a per-round counter would cycle forever.
    consumed: dict = {}

    def _solve(step_n: int):
        """Solve increment [t_n, t_{n+1}] from the running guess."""
        u_d_next = lifting_for_step(program, step_n + 1, mesh)
        anchor = history.steps[step_n].a
        res = alternate_minimize(guess_u, guess_a, anchor, u_d_next, kernels, p, cfg, dofmap)
        report = check_two_sided(
            step_n,
            history.steps[step_n].u,
            lifting_for_step(program, step_n, mesh),
            history.steps[step_n].a,
            res.u,
            u_d_next,
            res.a,
            kernels,
            p,
            bt.eta,
            compat_box1=compat_box1,
        )
        return res, report, u_d_next

    while n < program.n_steps:
        pre_guess = (guess_u.copy(), guess_a.copy()) if store_guesses else (None, None)
        try:
            res, report, u_d_next = _solve(n)
        except StepFailure as exc:
            history.aborted = True
            history.abort_reason = str(exc)
            return history
        guess_u, guess_a = res.u, res.a

        failed_at = n + 1
        b = consumed.get(failed_at, 0)
        if not report.passed and bt.k_max > 0 and b < bt.k_max:
            history.intermediates.append(
                _intermediate(res, report, program, kernels, p, reaction, b, u_d_next, store_intermediate_fields)
            )
            while not report.passed and b < bt.k_max and n > 0:
                n -= 1
                b += 1
                history.backtracks.append(
                    BacktrackEvent(failed_step=failed_at, resolved_step=n + 1, b=b)
                )
                pre_guess = (guess_u.copy(), guess_a.copy()) if store_guesses else (None, None)
                try:
                    res, report, u_d_next = _solve(n)
                except StepFailure as exc:
                    history.aborted = True
                    history.abort_reason = str(exc)
                    return history
                guess_u, guess_a = res.u, res.a
                history.intermediates.append(
                    _intermediate(res, report, program, kernels, p, reaction, b, u_d_next, store_intermediate_fields)
                )
            consumed[failed_at] = b

        if res.clamp_max > CLAMP_ABORT:
            history.aborted = True
            history.abort_reason = (
                f"damage clamp {res.clamp_max:.3e} exceeded {CLAMP_ABORT:.0e} at step {n + 1}"
            )
            return history

        record = StepRecord(
            step=n + 1,
            w=program.w(n + 1),
            u=res.u.copy(),
            a=res.a.copy(),
            report=report,
            alt_iters=res.alt_iters,
            newton_iters_u=res.newton_iters_u,
            newton_iters_beta=res.newton_iters_beta,
            clamp_max=res.clamp_max,
            irreversibility_violation=bool(
                report.d_inc < -_DISS_REL_TOL * (1.0 + dis(history.steps[n].a, kernels, p))
            ),
            functional_trace=list(res.functional_trace),
            guess_u=pre_guess[0],
            guess_a=pre_guess[1],
        )
        if reaction is not None:
            tag, direction = reaction
            record.reaction = reaction_force(res.u, u_d_next, res.a, kernels, p, tag, direction)

        if n + 1 < len(history.steps):
            history.steps[n + 1] = record
            del history.steps[n + 2 :]  # later states now refer to a replaced chain
        else:
            history.steps.append(record)
        n += 1

        if on_accept is not None:
            on_accept(history)

    return history


def _intermediate(
    res: AltResult,
    report: EnergyReport,
    program: LoadProgram,
    kernels: ElementKernels,
    p: MaterialParams,
    reaction,
    b: int,
    u_d_next,
    keep_fields: bool,
) -> IntermediateRecord:
    rec = IntermediateRecord(
        target_step=report.step + 1,
        w=program.w(report.step + 1),
        b=b,
        passed=report.passed,
        delta=report.delta,
        lb=report.lb,
        ub=report.ub,
    )
    if reaction is not None:
        tag, direction = reaction
        rec.reaction = reaction_force(res.u, u_d_next, res.a, kernels, p, tag, direction)
    if keep_fields:
        rec.u = res.u.copy()
        rec.a = res.a.copy()
    return rec
