"""P1 finite-element kernels and assembly of the coupled damage/displacement
residuals and consistent tangents.

Displacement dofs are interleaved per node (``dim * node + component``);
damage has one dof per node.  The total displacement field is always the sum
``U + U_D`` of the free vector U (zero on constrained dofs) and the Dirichlet
lifting U_D (prescribed values on constrained dofs, zero elsewhere).

Assembly is vectorized over elements with a fixed element-order reduction
(``np.add.at`` / duplicate-summing COO), so identical inputs produce bitwise
identical residuals and matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .material import (
    AT2,
    MaterialParams,
    degradation,
    psi_split,
    sigma_split,
    strain_tensor_from_voigt,
    stress_voigt_from_tensor,
    tangent_split,
)
from .mesh import Mesh, MeshError

__all__ = [
    "QuadratureRule",
    "ElementKernels",
    "DofMap",
    "TRI_RULE",
    "TET_RULE",
    "build_kernels",
    "strain_voigt",
    "beta_at_qp",
    "internal_force_u",
    "residual_u",
    "residual_beta",
    "tangent_u",
    "tangent_beta",
    "reaction_force",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric quadrature points and weights (summing to the reference
    simplex measure)."""

    points: np.ndarray
    weights: np.ndarray


# Degree-2 rules: 3-point on triangles, 4-point on tetrahedra.
TRI_RULE = QuadratureRule(
    points=np.array(
        [
            [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        ]
    ),
    weights=np.full(3, 1.0 / 6.0),
)

_TET_A = 0.5854101966249685  # (5 + 3*sqrt(5)) / 20
_TET_B = 0.1381966011250105  # (5 - sqrt(5)) / 20
TET_RULE = QuadratureRule(
    points=np.array(
        [
            [_TET_A, _TET_B, _TET_B, _TET_B],
            [_TET_B, _TET_A, _TET_B, _TET_B],
            [_TET_B, _TET_B, _TET_A, _TET_B],
            [_TET_B, _TET_B, _TET_B, _TET_A],
        ]
    ),
    weights=np.full(4, 1.0 / 24.0),
)

_REF_GRADS = {
    2: np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]),
    3: np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
}


@dataclass
class ElementKernels:
    """Per-element shape data for the whole mesh (batched arrays).

    Attributes
    ----------
    b_u : (n_e, nv, nen*dim)
        Strain-displacement matrices (engineering Voigt rows).
    b_beta : (n_e, dim, nen)
        Damage-gradient matrices.
    shape_qp : (nqp, nen)
        P1 shape values at the quadrature points (identical per element).
    wj : (n_e, nqp)
        Quadrature weight times Jacobian determinant; rows sum to the
        element measure.
    """

    mesh: Mesh
    quad: QuadratureRule
    shape_qp: np.ndarray
    b_u: np.ndarray
    b_beta: np.ndarray
    detj: np.ndarray
    wj: np.ndarray
    measures: np.ndarray
    udofs: np.ndarray

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def elements(self) -> np.ndarray:
        return self.mesh.elements


def build_kernels(mesh: Mesh) -> ElementKernels:
    """Precompute P1 shape-function values, gradients and quadrature data."""
    dim = mesh.dim
    nen = dim + 1
    x = mesh.nodes[mesh.elements]  # (n_e, nen, dim)
    # Jacobian columns are the edge vectors from node 0
    jac = np.stack([x[:, k + 1] - x[:, 0] for k in range(dim)], axis=-1)

    if dim == 2:
        detj = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    else:
        detj = np.einsum(
            "ei,ei->e", jac[:, :, 0], np.cross(jac[:, :, 1], jac[:, :, 2], axis=1)
        )
    if np.any(detj <= 0.0):
        raise MeshError("degenerate element (non-positive Jacobian)")

    jinv = np.linalg.inv(jac)
    grads = np.einsum("id,edD->eiD", _REF_GRADS[dim], jinv)  # (n_e, nen, dim)

    n_e = mesh.n_elements
    nv = 3 if dim == 2 else 6
    b_u = np.zeros((n_e, nv, nen * dim))
    for i in range(nen):
        gx = grads[:, i, 0]
        gy = grads[:, i, 1]
        if dim == 2:
            b_u[:, 0, 2 * i] = gx
            b_u[:, 1, 2 * i + 1] = gy
            b_u[:, 2, 2 * i] = gy
            b_u[:, 2, 2 * i + 1] = gx
        else:
            gz = grads[:, i, 2]
            b_u[:, 0, 3 * i] = gx
            b_u[:, 1, 3 * i + 1] = gy
            b_u[:, 2, 3 * i + 2] = gz
            b_u[:, 3, 3 * i + 1] = gz
            b_u[:, 3, 3 * i + 2] = gy
            b_u[:, 4, 3 * i] = gz
            b_u[:, 4, 3 * i + 2] = gx
            b_u[:, 5, 3 * i] = gy
            b_u[:, 5, 3 * i + 1] = gx

    b_beta = np.swapaxes(grads, 1, 2)

    quad = TRI_RULE if dim == 2 else TET_RULE
    wj = quad.weights[None, :] * detj[:, None]
    udofs = (dim * mesh.elements[:, :, None] + np.arange(dim)[None, None, :]).reshape(
        n_e, nen * dim
    )
    return ElementKernels(
        mesh=mesh,
        quad=quad,
        shape_qp=quad.points,
        b_u=b_u,
        b_beta=b_beta,
        detj=detj,
        wj=wj,
        measures=wj.sum(axis=1),
        udofs=udofs,
    )


@dataclass
class DofMap:
    """Free/constrained partition of the displacement dofs.

    The constrained dofs carry the lifting values U_D per load step; the
    free system is solved by row/column elimination.
    """

    dim: int
    n_nodes: int
    fixed: np.ndarray
    free: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.dim * self.n_nodes

    @classmethod
    def from_constraints(cls, mesh: Mesh, constraints) -> "DofMap":
        """Build from an iterable of (node_ids, component) pairs."""
        fixed: list = []
        for node_ids, comp in constraints:
            node_ids = np.asarray(node_ids, dtype=np.int64)
            fixed.append(mesh.dim * node_ids + int(comp))
        fixed_arr = (
            np.unique(np.concatenate(fixed)) if fixed else np.empty(0, dtype=np.int64)
        )
        n_dofs = mesh.dim * mesh.n_nodes
        mask = np.zeros(n_dofs, dtype=bool)
        mask[fixed_arr] = True
        return cls(
            dim=mesh.dim,
            n_nodes=mesh.n_nodes,
            fixed=fixed_arr,
            free=np.flatnonzero(~mask).astype(np.int64),
        )


def strain_voigt(kernels: ElementKernels, total_disp: np.ndarray) -> np.ndarray:
    """Per-element engineering-strain Voigt vectors for U + U_D."""
    elem_disp = total_disp[kernels.udofs]
    return np.einsum("evd,ed->ev", kernels.b_u, elem_disp)


def element_psi_split(kernels: ElementKernels, total_disp: np.ndarray, p: MaterialParams):
    """Tensile/compressive energy densities per element (constant for P1)."""
    eps = strain_tensor_from_voigt(strain_voigt(kernels, total_disp), kernels.dim)
    return psi_split(eps, p)


def beta_at_qp(kernels: ElementKernels, a: np.ndarray) -> np.ndarray:
    """Damage values at the quadrature points, (n_e, nqp)."""
    return a[kernels.elements] @ kernels.shape_qp.T


def _degradation_weights(kernels: ElementKernels, a: np.ndarray, p: MaterialParams):
    """Quadrature sum of w*j*R(beta) per element (weights the tensile part)."""
    r_qp, _ = degradation(beta_at_qp(kernels, a), p)
    return np.einsum("eq,eq->e", kernels.wj, r_qp)


def internal_force_u(u, u_d, a, kernels: ElementKernels, p: MaterialParams) -> np.ndarray:
    """Unconstrained internal force vector over all displacement dofs."""
    eps = strain_tensor_from_voigt(strain_voigt(kernels, u + u_d), kernels.dim)
    sig_p, sig_m = sigma_split(eps, p)
    sp_v = stress_voigt_from_tensor(sig_p, kernels.dim)
    sm_v = stress_voigt_from_tensor(sig_m, kernels.dim)
    rw = _degradation_weights(kernels, a, p)
    sig_eff = rw[:, None] * sp_v + kernels.measures[:, None] * sm_v
    f_e = np.einsum("evd,ev->ed", kernels.b_u, sig_eff)
    out = np.zeros(kernels.dim * kernels.mesh.n_nodes)
    np.add.at(out, kernels.udofs.ravel(), f_e.ravel())
    return out


def residual_u(u, u_d, a, kernels, p, dofmap: DofMap) -> np.ndarray:
    """Displacement residual restricted to the free dofs (zero external
    load: Dirichlet-driven problems only)."""
    return internal_force_u(u, u_d, a, kernels, p)[dofmap.free]


def residual_beta(u, u_d, a, a_n, kernels: ElementKernels, p: MaterialParams) -> np.ndarray:
    """Damage residual over all damage dofs (one per node)."""
    eps = strain_tensor_from_voigt(strain_voigt(kernels, u + u_d), kernels.dim)
    psi_p, _ = psi_split(eps, p)

    beta_qp = beta_at_qp(kernels, a)
    _, dr_qp = degradation(beta_qp, p)
    gap_qp = (a - a_n)[kernels.elements] @ kernels.shape_qp.T
    pen_qp = np.minimum(gap_qp, 0.0) / p.eps_pen
    if p.dissipation == AT2:
        diss_qp = (p.gc / p.ell) * beta_qp
    else:
        diss_qp = (p.kappa * p.gc / p.ell) * np.ones_like(beta_qp)

    s_qp = dr_qp * psi_p[:, None] + diss_qp + pen_qp
    f_e = np.einsum("eq,qi->ei", kernels.wj * s_qp, kernels.shape_qp)

    bb = np.einsum("edi,edj->eij", kernels.b_beta, kernels.b_beta)
    a_e = a[kernels.elements]
    f_e += (p.gc * p.ell) * kernels.measures[:, None] * np.einsum("eij,ej->ei", bb, a_e)

    out = np.zeros(kernels.mesh.n_nodes)
    np.add.at(out, kernels.elements.ravel(), f_e.ravel())
    return out


def _assemble(rows, cols, vals, n, keep_map=None) -> sp.csr_matrix:
    """COO->CSR assembly; duplicate entries sum in canonical order."""
    rows = rows.ravel()
    cols = cols.ravel()
    vals = vals.ravel()
    if keep_map is not None:
        r = keep_map[rows]
        c = keep_map[cols]
        keep = (r >= 0) & (c >= 0)
        rows, cols, vals = r[keep], c[keep], vals[keep]
        n = int(keep_map.max()) + 1
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    return mat.tocsr()


def _tangent_u_from_parts(cp, cm, rw, kernels, dofmap) -> sp.csr_matrix:
    c_e = rw[:, None, None] * cp + kernels.measures[:, None, None] * cm
    k_e = np.einsum("evi,evj->eij", kernels.b_u, c_e @ kernels.b_u)

    nd = kernels.udofs.shape[1]
    rows = np.repeat(kernels.udofs, nd, axis=1)
    cols = np.tile(kernels.udofs, (1, nd))

    keep_map = -np.ones(dofmap.n_dofs, dtype=np.int64)
    keep_map[dofmap.free] = np.arange(dofmap.free.size)
    return _assemble(rows, cols, k_e, dofmap.n_dofs, keep_map=keep_map)


def tangent_u(u, u_d, a, kernels: ElementKernels, p: MaterialParams, dofmap: DofMap) -> sp.csr_matrix:
    """Consistent displacement tangent over the free dofs (sparse, SPD for
    damage below one and k > 0)."""
    eps = strain_tensor_from_voigt(strain_voigt(kernels, u + u_d), kernels.dim)
    cp, cm = tangent_split(eps, p)
    rw = _degradation_weights(kernels, a, p)
    return _tangent_u_from_parts(cp, cm, rw, kernels, dofmap)


def residual_and_tangent_u(u, u_d, a, kernels: ElementKernels, p: MaterialParams, dofmap: DofMap):
    """Residual and tangent in one pass (shared strain evaluation and
    spectral decomposition; the Newton loops' hot path)."""
    eps = strain_tensor_from_voigt(strain_voigt(kernels, u + u_d), kernels.dim)
    sig_p, sig_m = sigma_split(eps, p)
    sp_v = stress_voigt_from_tensor(sig_p, kernels.dim)
    sm_v = stress_voigt_from_tensor(sig_m, kernels.dim)
    rw = _degradation_weights(kernels, a, p)
    sig_eff = rw[:, None] * sp_v + kernels.measures[:, None] * sm_v
    f_e = np.einsum("evd,ev->ed", kernels.b_u, sig_eff)
    full = np.zeros(kernels.dim * kernels.mesh.n_nodes)
    np.add.at(full, kernels.udofs.ravel(), f_e.ravel())

    cp, cm = tangent_split(eps, p)
    return full[dofmap.free], _tangent_u_from_parts(cp, cm, rw, kernels, dofmap)


def _tangent_beta_from_parts(psi_p, gap_qp, kernels, p) -> sp.csr_matrix:
    active = (gap_qp < 0.0).astype(np.float64)
    coeff_qp = 2.0 * psi_p[:, None] + active / p.eps_pen
    if p.dissipation == AT2:
        coeff_qp = coeff_qp + p.gc / p.ell

    k_e = np.einsum("eq,qi,qj->eij", kernels.wj * coeff_qp, kernels.shape_qp, kernels.shape_qp)
    bb = np.einsum("edi,edj->eij", kernels.b_beta, kernels.b_beta)
    k_e = k_e + (p.gc * p.ell) * kernels.measures[:, None, None] * bb

    nen = kernels.elements.shape[1]
    rows = np.repeat(kernels.elements, nen, axis=1)
    cols = np.tile(kernels.elements, (1, nen))
    return _assemble(rows, cols, k_e, kernels.mesh.n_nodes)


def tangent_beta(u, u_d, a, a_n, kernels: ElementKernels, p: MaterialParams) -> sp.csr_matrix:
    """Damage tangent: tensile-energy/dissipation mass + gradient stiffness
    + active-set penalty mass (generalized derivative of the negative part)."""
    eps = strain_tensor_from_voigt(strain_voigt(kernels, u + u_d), kernels.dim)
    psi_p, _ = psi_split(eps, p)
    gap_qp = (a - a_n)[kernels.elements] @ kernels.shape_qp.T
    return _tangent_beta_from_parts(psi_p, gap_qp, kernels, p)


def residual_and_tangent_beta(psi_p, a, a_n, kernels: ElementKernels, p: MaterialParams):
    """Damage residual and tangent from a precomputed tensile energy density
    (constant per element at fixed displacement, the beta-Newton hot path)."""
    beta_qp = beta_at_qp(kernels, a)
    _, dr_qp = degradation(beta_qp, p)
    gap_qp = (a - a_n)[kernels.elements] @ kernels.shape_qp.T
    pen_qp = np.minimum(gap_qp, 0.0) / p.eps_pen
    if p.dissipation == AT2:
        diss_qp = (p.gc / p.ell) * beta_qp
    else:
        diss_qp = (p.kappa * p.gc / p.ell) * np.ones_like(beta_qp)

    s_qp = dr_qp * psi_p[:, None] + diss_qp + pen_qp
    f_e = np.einsum("eq,qi->ei", kernels.wj * s_qp, kernels.shape_qp)
    bb = np.einsum("edi,edj->eij", kernels.b_beta, kernels.b_beta)
    a_e = a[kernels.elements]
    f_e += (p.gc * p.ell) * kernels.measures[:, None] * np.einsum("eij,ej->ei", bb, a_e)
    out = np.zeros(kernels.mesh.n_nodes)
    np.add.at(out, kernels.elements.ravel(), f_e.ravel())

    return out, _tangent_beta_from_parts(psi_p, gap_qp, kernels, p)


def reaction_force(u, u_d, a, kernels: ElementKernels, p: MaterialParams, set_tag: str, direction) -> float:
    """Work-conjugate reaction: directional sum of the unconstrained internal
    force over the nodes of a tagged set."""
    mesh = kernels.mesh
    if set_tag not in mesh.node_sets:
        raise KeyError(f"unknown node set {set_tag!r}")
    nodes = mesh.node_sets[set_tag]
    direction = np.asarray(direction, dtype=np.float64)
    r = internal_force_u(u, u_d, a, kernels, p)
    total = 0.0
    for c in range(mesh.dim):
        if direction[c] != 0.0:
            total += direction[c] * float(np.sum(r[mesh.dim * nodes + c]))
    return total
