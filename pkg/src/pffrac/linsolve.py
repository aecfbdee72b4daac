"""Sparse symmetric positive-definite solves for the Newton tangents.

Direct sparse LU factorization is the default; problems above a size
threshold fall back to conjugate gradients with a Jacobi preconditioner.
Solutions are residual-checked so an indefinite or singular tangent is
reported instead of silently returning garbage.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["LinearSolveError", "factor_solve", "CG_DOF_THRESHOLD"]

# Above this dof count the direct factorization is replaced by CG.
CG_DOF_THRESHOLD = 200_000

_DIRECT_RTOL = 1e-10
_CG_RTOL = 1e-8


class LinearSolveError(RuntimeError):
    """Factorization breakdown or unacceptable solve residual."""


def factor_solve(a: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Solve the SPD system a x = b.

    Relative residual is bounded by 1e-10 (direct) or 1e-8 (CG fallback);
    violations raise LinearSolveError ("indefinite/singular").
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if a.shape != (n, n):
        raise LinearSolveError(f"matrix shape {a.shape} incompatible with rhs {n}")
    if not np.all(np.isfinite(b)):
        raise LinearSolveError("non-finite right-hand side")

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n)

    if n <= CG_DOF_THRESHOLD:
        try:
            lu = spla.splu(sp.csc_matrix(a))
            x = lu.solve(b)
        except RuntimeError as exc:
            raise LinearSolveError(f"indefinite/singular tangent: {exc}") from exc
        rtol = _DIRECT_RTOL
    else:
        diag = a.diagonal()
        if np.any(diag <= 0.0):
            raise LinearSolveError("indefinite/singular tangent: non-positive diagonal")
        m = sp.diags(1.0 / diag)
        x, info = spla.cg(a, b, rtol=_CG_RTOL, atol=0.0, M=m)
        if info != 0:
            raise LinearSolveError(f"CG did not converge (info={info})")
        rtol = _CG_RTOL

    res = float(np.linalg.norm(a @ x - b)) / b_norm
    if not np.isfinite(res) or res > rtol:
        raise LinearSolveError(
            f"indefinite/singular tangent: solve residual {res:.3e} > {rtol:.1e}"
        )
    return x
