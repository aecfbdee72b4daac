"""Pointwise constitutive kernels for the tension/compression-split damage model.

Strain and stress tensors are plain symmetric numpy arrays of shape
``(..., d, d)`` with ``d`` in {2, 3}; leading axes broadcast, so the same
functions serve single quadrature points and whole-mesh batches.  Plane
strain is handled by embedding 2x2 strains into 3x3 with an exactly zero
out-of-plane eigenvalue (eigenvector e_z), so the split formulas are
dimension-uniform.

Units: moduli in N/mm^2, ``gc`` in N/mm, lengths in mm (energies then come
out in N*mm).  Inputs given in kN/mm^2 are converted once, at construction,
via the ``from_*`` helpers.

Sign conventions at a zero eigenvalue: the positive part takes derivative 0
and the negative part derivative 1 (compression-side convention), so the
tangent at zero strain equals the full undegraded elasticity tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MaterialParams",
    "SplitState",
    "spectral_split",
    "psi_split",
    "sigma_split",
    "degradation",
    "stress",
    "tangent",
    "tangent_split",
    "strain_tensor_from_voigt",
    "stress_voigt_from_tensor",
    "elastic_tensor",
]

AT2 = "AT2"
AT1 = "AT1"

# Relative eigenvalue-gap threshold below which the tangent switches to the
# repeated-eigenvalue limit formula.
_GAP_REL = 1e-9

# Voigt component order (xx, yy, zz, yz, xz, xy); 2-D uses rows/cols (0, 1, 5).
_VOIGT_I = np.array([0, 1, 2, 1, 0, 0])
_VOIGT_J = np.array([0, 1, 2, 2, 2, 1])
_PLANE_IDX = np.array([0, 1, 5])


@dataclass(frozen=True)
class MaterialParams:
    """Constitutive parameters.

    Attributes
    ----------
    lam, mu : float
        Lame constants (N/mm^2).
    gc : float
        Critical energy release rate (N/mm).
    ell : float
        Internal length controlling the damage band width (mm).
    k : float
        Residual stiffness of the fully broken phase (dimensionless).
    dissipation : str
        "AT2" (quadratic) or "AT1" (linear with activation threshold).
    kappa : float or None
        AT1 activation threshold (dimensionless); required iff AT1.
    eps_pen : float
        Irreversibility penalty factor (dimensionless).
    """

    lam: float
    mu: float
    gc: float
    ell: float
    k: float = 1e-4
    dissipation: str = AT2
    kappa: float | None = None
    eps_pen: float = 1e-6

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("lam must be >= 0")
        if self.mu <= 0.0 or self.gc <= 0.0 or self.ell <= 0.0:
            raise ValueError("mu, gc, ell must be > 0")
        if not 0.0 < self.k < 1.0:
            raise ValueError("k must be in (0, 1)")
        if self.eps_pen <= 0.0:
            raise ValueError("eps_pen must be > 0")
        if self.dissipation not in (AT2, AT1):
            raise ValueError(f"unknown dissipation variant {self.dissipation!r}")
        if self.dissipation == AT1 and (self.kappa is None or self.kappa <= 0.0):
            raise ValueError("AT1 requires kappa > 0")

    @classmethod
    def from_lame_kn(cls, lam_kn: float, mu_kn: float, **kw) -> "MaterialParams":
        """Build from Lame constants given in kN/mm^2."""
        return cls(lam=1e3 * lam_kn, mu=1e3 * mu_kn, **kw)

    @classmethod
    def from_young_poisson_kn(cls, e_kn: float, nu: float, **kw) -> "MaterialParams":
        """Build from Young's modulus (kN/mm^2) and Poisson ratio."""
        e = 1e3 * e_kn
        lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        mu = e / (2.0 * (1.0 + nu))
        return cls(lam=lam, mu=mu, **kw)


@dataclass
class SplitState:
    """Spectral decomposition of a strain state (3x3 embedding)."""

    eigvals: np.ndarray  # (..., 3)
    eigvecs: np.ndarray  # (..., 3, 3), columns are principal directions
    eps_plus: np.ndarray  # (..., 3, 3)
    eps_minus: np.ndarray  # (..., 3, 3)


def _check_sym(eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    d = eps.shape[-1]
    if eps.ndim < 2 or eps.shape[-2] != d or d not in (2, 3):
        raise ValueError("strain must have shape (..., d, d) with d in {2, 3}")
    return eps


def _eig_embedded(eps: np.ndarray):
    """Eigenvalues/-vectors of the 3x3 embedding of a (..., d, d) strain.

    For plane strain the out-of-plane eigenpair is exactly (0, e_z), kept
    last, so the zero eigenvalue never suffers eigensolver round-off.
    """
    d = eps.shape[-1]
    if d == 3:
        return np.linalg.eigh(eps)

    a = eps[..., 0, 0]
    b = eps[..., 1, 1]
    c = eps[..., 0, 1]
    m = 0.5 * (a + b)
    h = 0.5 * (a - b)
    r = np.hypot(h, c)
    w1 = m - r
    w2 = m + r

    # eigenvector of w2; pick the better-conditioned analytic form
    use_h = h >= 0.0
    vx = np.where(use_h, r + h, c)
    vy = np.where(use_h, c, r - h)
    norm = np.hypot(vx, vy)
    deg = norm <= 0.0
    safe = np.where(deg, 1.0, norm)
    vx = np.where(deg, 1.0, vx / safe)
    vy = np.where(deg, 0.0, vy / safe)

    shape = eps.shape[:-2]
    w = np.zeros(shape + (3,))
    w[..., 0] = w1
    w[..., 1] = w2
    v = np.zeros(shape + (3, 3))
    v[..., 0, 0] = -vy
    v[..., 1, 0] = vx
    v[..., 0, 1] = vx
    v[..., 1, 1] = vy
    v[..., 2, 2] = 1.0
    return w, v


def spectral_split(eps: np.ndarray) -> SplitState:
    """Decompose strain into tensile/compressive parts by signed principal
    strains: eps_pm = sum_a <w_a>_pm n_a (x) n_a."""
    eps = _check_sym(eps)
    w, v = _eig_embedded(eps)
    wp = np.maximum(w, 0.0)
    wm = np.minimum(w, 0.0)
    eps_p = np.einsum("...ia,...a,...ja->...ij", v, wp, v)
    eps_m = np.einsum("...ia,...a,...ja->...ij", v, wm, v)
    return SplitState(eigvals=w, eigvecs=v, eps_plus=eps_p, eps_minus=eps_m)


def psi_split(eps: np.ndarray, p: MaterialParams):
    """Tensile/compressive elastic energy densities.

    psi0_pm = lam/2 (tr eps_pm)^2 + mu eps_pm : eps_pm, evaluated from the
    signed principal strains.  Both values are >= 0 (lam >= 0).
    """
    eps = _check_sym(eps)
    w, _ = _eig_embedded(eps)
    wp = np.maximum(w, 0.0)
    wm = np.minimum(w, 0.0)
    trp = wp.sum(axis=-1)
    trm = wm.sum(axis=-1)
    psi_p = 0.5 * p.lam * trp * trp + p.mu * (wp * wp).sum(axis=-1)
    psi_m = 0.5 * p.lam * trm * trm + p.mu * (wm * wm).sum(axis=-1)
    return psi_p, psi_m


def _split_stress_coeffs(w: np.ndarray, p: MaterialParams):
    """Principal stress coefficients of sigma0_pm (gradients of psi0_pm).

    f_a^+ = lam tr(eps_+) H(w_a > 0) + 2 mu <w_a>_+ and the mirrored minus
    part with H(w_a <= 0); H at zero follows the compression-side convention.
    """
    wp = np.maximum(w, 0.0)
    wm = np.minimum(w, 0.0)
    hp = (w > 0.0).astype(np.float64)
    hm = 1.0 - hp
    trp = wp.sum(axis=-1, keepdims=True)
    trm = wm.sum(axis=-1, keepdims=True)
    fp = p.lam * trp * hp + 2.0 * p.mu * wp
    fm = p.lam * trm * hm + 2.0 * p.mu * wm
    return fp, fm, hp, hm


def sigma_split(eps: np.ndarray, p: MaterialParams):
    """Tensile/compressive stresses, the exact gradients of ``psi_split``.

    Returned in the input dimension (in-plane block for plane strain; the
    out-of-plane normal stress never enters 2-D assembly).
    """
    eps = _check_sym(eps)
    d = eps.shape[-1]
    w, v = _eig_embedded(eps)
    fp, fm, _, _ = _split_stress_coeffs(w, p)
    sig_p = np.einsum("...ia,...a,...ja->...ij", v, fp, v)
    sig_m = np.einsum("...ia,...a,...ja->...ij", v, fm, v)
    return sig_p[..., :d, :d], sig_m[..., :d, :d]


def degradation(beta, p: MaterialParams):
    """Degradation factor R = (1 - beta)^2 + k and its derivative."""
    beta = np.asarray(beta, dtype=np.float64)
    one_m = 1.0 - beta
    return one_m * one_m + p.k, -2.0 * one_m


def stress(eps: np.ndarray, beta, p: MaterialParams) -> np.ndarray:
    """Degraded stress R(beta) sigma0_+ + sigma0_-."""
    sig_p, sig_m = sigma_split(eps, p)
    r, _ = degradation(beta, p)
    return np.asarray(r)[..., None, None] * sig_p + sig_m


def _voigt_from_c4(c4: np.ndarray, d: int) -> np.ndarray:
    cv = c4[..., _VOIGT_I[:, None], _VOIGT_J[:, None], _VOIGT_I[None, :], _VOIGT_J[None, :]]
    if d == 2:
        cv = cv[..., _PLANE_IDX[:, None], _PLANE_IDX[None, :]]
    return cv


def tangent_split(eps: np.ndarray, p: MaterialParams):
    """Tangents of the split stresses: (d sigma0_+/d eps, d sigma0_-/d eps).

    Both in engineering-shear Voigt form (3x3 over (xx, yy, xy) in 2-D,
    6x6 over (xx, yy, zz, yz, xz, xy) in 3-D), built from eigenprojection
    derivatives.  Near-repeated eigenvalues (gap below 1e-9*(1+|eps|)) use
    the coalesced-pair limit of the shear coefficient.
    """
    eps = _check_sym(eps)
    d = eps.shape[-1]
    w, v = _eig_embedded(eps)
    fp, fm, hp, hm = _split_stress_coeffs(w, p)
    lam, mu = p.lam, p.mu

    # normal blocks: D_ab = d f_a / d w_b
    idx = np.arange(3)
    dp = lam * hp[..., :, None] * hp[..., None, :]
    dp[..., idx, idx] += 2.0 * mu * hp
    dm = lam * hm[..., :, None] * hm[..., None, :]
    dm[..., idx, idx] += 2.0 * mu * hm

    def _transform(d_ab):
        # sum_ab D_ab M_a (x) M_b, staged for a cheap contraction path
        w_akl = np.einsum("...ab,...kb,...lb->...akl", d_ab, v, v)
        return np.einsum("...ia,...ja,...akl->...ijkl", v, v, w_akl)

    c4p = _transform(dp)
    c4m = _transform(dm)

    gap_tol = _GAP_REL * (1.0 + np.linalg.norm(eps, axis=(-2, -1)))
    for a, b in ((0, 1), (0, 2), (1, 2)):
        dw = w[..., a] - w[..., b]
        small = np.abs(dw) < gap_tol
        safe = np.where(small, 1.0, dw)
        # coalesced limit: the lam coupling cancels, leaving 2 mu per branch
        hbp = (0.5 * (w[..., a] + w[..., b]) > 0.0).astype(np.float64)
        gp = np.where(small, 2.0 * mu * hbp, (fp[..., a] - fp[..., b]) / safe)
        gm = np.where(small, 2.0 * mu * (1.0 - hbp), (fm[..., a] - fm[..., b]) / safe)
        pab = np.einsum("...i,...j->...ij", v[..., :, a], v[..., :, b])
        pab = pab + np.swapaxes(pab, -1, -2)
        pp = np.einsum("...ij,...kl->...ijkl", pab, pab)
        c4p = c4p + 0.5 * gp[..., None, None, None, None] * pp
        c4m = c4m + 0.5 * gm[..., None, None, None, None] * pp

    return _voigt_from_c4(c4p, d), _voigt_from_c4(c4m, d)


def tangent(eps: np.ndarray, beta, p: MaterialParams) -> np.ndarray:
    """Consistent tangent d sigma / d eps at fixed beta, in Voigt form.

    R(beta) * (tensile tangent) + (compressive tangent); see
    ``tangent_split`` for conventions and the repeated-eigenvalue handling.
    """
    cp, cm = tangent_split(eps, p)
    r, _ = degradation(beta, p)
    return np.asarray(r)[..., None, None] * cp + cm


def elastic_tensor(dim: int, p: MaterialParams) -> np.ndarray:
    """Undegraded isotropic elasticity matrix in engineering Voigt form."""
    lam, mu = p.lam, p.mu
    if dim == 2:
        c = np.array(
            [
                [lam + 2 * mu, lam, 0.0],
                [lam, lam + 2 * mu, 0.0],
                [0.0, 0.0, mu],
            ]
        )
    else:
        c = np.zeros((6, 6))
        c[:3, :3] = lam
        c[np.arange(3), np.arange(3)] = lam + 2 * mu
        c[np.arange(3, 6), np.arange(3, 6)] = mu
    return c


def strain_tensor_from_voigt(v: np.ndarray, dim: int) -> np.ndarray:
    """Engineering-strain Voigt vector(s) to symmetric tensor(s)."""
    v = np.asarray(v, dtype=np.float64)
    if dim == 2:
        out = np.zeros(v.shape[:-1] + (2, 2))
        out[..., 0, 0] = v[..., 0]
        out[..., 1, 1] = v[..., 1]
        out[..., 0, 1] = out[..., 1, 0] = 0.5 * v[..., 2]
    else:
        out = np.zeros(v.shape[:-1] + (3, 3))
        out[..., 0, 0] = v[..., 0]
        out[..., 1, 1] = v[..., 1]
        out[..., 2, 2] = v[..., 2]
        out[..., 1, 2] = out[..., 2, 1] = 0.5 * v[..., 3]
        out[..., 0, 2] = out[..., 2, 0] = 0.5 * v[..., 4]
        out[..., 0, 1] = out[..., 1, 0] = 0.5 * v[..., 5]
    return out


def stress_voigt_from_tensor(t: np.ndarray, dim: int) -> np.ndarray:
    """Symmetric stress tensor(s) to Voigt vector(s)."""
    t = np.asarray(t, dtype=np.float64)
    if dim == 2:
        return np.stack([t[..., 0, 0], t[..., 1, 1], t[..., 0, 1]], axis=-1)
    return np.stack(
        [
            t[..., 0, 0],
            t[..., 1, 1],
            t[..., 2, 2],
            t[..., 1, 2],
            t[..., 0, 2],
            t[..., 0, 1],
        ],
        axis=-1,
    )
