import numpy as np
import pytest

from conftest import random_state
from pffrac.energetics import (
    check_two_sided,
    dis,
    dissipation_increment,
    erg,
    grad_term,
    lower_bound,
    penalty_energy,
    upper_bound,
)
from pffrac.fem import build_kernels
from pffrac.material import MaterialParams, psi_split
from pffrac.mesh import generate_structured


def dense_erg(u1, u2, a, mesh, kernels, p):
    """Per-element dense re-evaluation of the degraded bulk energy."""
    total = 0.0
    disp = (u1 + u2)[kernels.udofs]
    for e in range(mesh.n_elements):
        v = kernels.b_u[e] @ disp[e]
        eps = np.array([[v[0], 0.5 * v[2]], [0.5 * v[2], v[1]]])
        psi_p, psi_m = psi_split(eps, p)
        for q in range(kernels.shape_qp.shape[0]):
            beta = kernels.shape_qp[q] @ a[kernels.elements[e]]
            r = (1 - beta) ** 2 + p.k
            total += kernels.wj[e, q] * (r * psi_p + psi_m)
    return total


@pytest.fixture
def patch(sent_params):
    mesh = generate_structured(2, [1.0, 1.0], [2, 2])
    return mesh, build_kernels(mesh)


class TestErg:
    def test_zero(self, patch, sent_params):
        mesh, kern = patch
        z = np.zeros(2 * mesh.n_nodes)
        assert erg(z, z, np.zeros(mesh.n_nodes), kern, sent_params) == 0.0

    def test_fully_damaged_tension_scales_with_k(self, patch, sent_params):
        mesh, kern = patch
        u_d = np.zeros(2 * mesh.n_nodes)
        u_d[1::2] = 1e-3 * mesh.nodes[:, 1]
        z = np.zeros_like(u_d)
        e1 = erg(z, u_d, np.ones(mesh.n_nodes), kern, sent_params)
        e0 = erg(z, u_d, np.zeros(mesh.n_nodes), kern, sent_params)
        # R(1) = k, R(0) = 1 + k, and the state is purely tensile
        assert e1 == pytest.approx(e0 * sent_params.k / (1 + sent_params.k), rel=1e-12)

    def test_dense_oracle(self, patch, sent_params, rng):
        mesh, kern = patch
        u, a, _ = random_state(mesh, rng)
        u2 = 1e-4 * rng.normal(size=u.size)
        got = erg(u, u2, a, kern, sent_params)
        want = dense_erg(u, u2, a, mesh, kern, sent_params)
        assert got == pytest.approx(want, rel=1e-12)


class TestGradTerm:
    def test_uniform_zero(self, patch, sent_params):
        mesh, kern = patch
        assert grad_term(np.full(mesh.n_nodes, 0.8), kern, sent_params) == pytest.approx(0.0, abs=1e-18)

    def test_linear_field(self, patch, sent_params):
        mesh, kern = patch
        slope = 0.6
        a = slope * mesh.nodes[:, 0]
        expect = 0.5 * sent_params.gc * sent_params.ell * slope**2  # unit area
        assert grad_term(a, kern, sent_params) == pytest.approx(expect, rel=1e-12)

    def test_matrix_form_oracle(self, patch, sent_params, rng):
        mesh, kern = patch
        a = rng.uniform(0, 1, mesh.n_nodes)
        kmat = np.zeros((mesh.n_nodes, mesh.n_nodes))
        for e in range(mesh.n_elements):
            bb = kern.b_beta[e].T @ kern.b_beta[e] * kern.measures[e]
            for i, gi in enumerate(kern.elements[e]):
                for j, gj in enumerate(kern.elements[e]):
                    kmat[gi, gj] += bb[i, j]
        want = 0.5 * sent_params.gc * sent_params.ell * a @ kmat @ a
        assert grad_term(a, kern, sent_params) == pytest.approx(want, rel=1e-12)


class TestDissipation:
    def test_zero(self, patch, sent_params):
        mesh, kern = patch
        assert dis(np.zeros(mesh.n_nodes), kern, sent_params) == 0.0

    def test_uniform_unit_damage_value(self, patch, sent_params):
        mesh, kern = patch
        got = dis(np.ones(mesh.n_nodes), kern, sent_params)
        assert got == pytest.approx(2.7 / (2 * 0.0175), rel=1e-12)  # 77.142857...

    def test_at1_linear_form(self, patch):
        mesh, kern = patch
        p = MaterialParams(
            lam=1e3, mu=1e3, gc=0.5, ell=0.2, dissipation="AT1", kappa=0.3, eps_pen=1e-6
        )
        beta = 0.37
        got = dis(np.full(mesh.n_nodes, beta), kern, p)
        assert got == pytest.approx(p.kappa * p.gc * beta / p.ell, rel=1e-12)

    def test_increment(self, patch, sent_params, rng):
        mesh, kern = patch
        a_n = rng.uniform(0, 0.5, mesh.n_nodes)
        assert dissipation_increment(a_n, a_n, kern, sent_params) == 0.0
        a = a_n + rng.uniform(0, 0.3, mesh.n_nodes)
        assert dissipation_increment(a_n, a, kern, sent_params) >= 0.0
        full = dissipation_increment(np.zeros(mesh.n_nodes), np.ones(mesh.n_nodes), kern, sent_params)
        assert full == pytest.approx(77.14285714285714, rel=1e-12)


class TestBounds:
    def lifting(self, mesh, w):
        u_d = np.zeros(2 * mesh.n_nodes)
        u_d[1::2] = w * mesh.nodes[:, 1]
        return u_d

    def test_vanish_on_frozen_load(self, patch, sent_params, rng):
        mesh, kern = patch
        u, a, _ = random_state(mesh, rng)
        u_d = self.lifting(mesh, 1e-3)
        assert upper_bound(u, u_d, u_d, a, kern, sent_params) == 0.0
        assert lower_bound(u, u_d, u_d, a, kern, sent_params) == 0.0

    def test_elastic_ramp_values(self, patch, sent_params):
        mesh, kern = patch
        a = np.zeros(mesh.n_nodes)
        u = np.zeros(2 * mesh.n_nodes)
        ud1, ud2 = self.lifting(mesh, 1e-3), self.lifting(mesh, 2e-3)
        ub = upper_bound(u, ud1, ud2, a, kern, sent_params)
        want = dense_erg(u, ud2, a, mesh, kern, sent_params) - dense_erg(u, ud1, a, mesh, kern, sent_params)
        assert ub == pytest.approx(want, rel=1e-12)
        assert ub > 0.0  # monotone tension ramp
        lb = lower_bound(u, ud1, ud2, a, kern, sent_params)
        assert lb <= ub

    def test_fully_damaged_lb_scales_with_k(self, patch, sent_params):
        mesh, kern = patch
        u = np.zeros(2 * mesh.n_nodes)
        ud1, ud2 = self.lifting(mesh, 1e-3), self.lifting(mesh, 2e-3)
        lb1 = lower_bound(u, ud1, ud2, np.ones(mesh.n_nodes), kern, sent_params)
        lb0 = lower_bound(u, ud1, ud2, np.zeros(mesh.n_nodes), kern, sent_params)
        assert abs(lb1) <= sent_params.k / (1 + sent_params.k) * abs(lb0) * (1 + 1e-10)

    def test_compat_box1_changes_lb(self, patch, sent_params, rng):
        mesh, kern = patch
        u, a, _ = random_state(mesh, rng)
        ud1, ud2 = self.lifting(mesh, 1e-3), self.lifting(mesh, 2e-3)
        lb = lower_bound(u, ud1, ud2, a, kern, sent_params)
        lb_compat = lower_bound(u, ud1, ud2, a, kern, sent_params, compat_box1=True)
        assert lb != lb_compat


class TestCheckTwoSided:
    def test_frozen_load_pass_iff_delta_small(self, patch, sent_params, rng):
        mesh, kern = patch
        u, a, a_n = random_state(mesh, rng)
        u_d = np.zeros(2 * mesh.n_nodes)
        rep = check_two_sided(3, u, u_d, a_n, u, u_d, a_n, kern, sent_params, eta=1e-5)
        assert rep.lb == 0.0 and rep.ub == 0.0
        assert rep.passed and abs(rep.delta) <= 1e-5

    def test_delta_above_ub_fails(self, patch, sent_params, rng):
        mesh, kern = patch
        u, a, a_n = random_state(mesh, rng)
        u_d = np.zeros(2 * mesh.n_nodes)
        # same lifting so both bounds vanish; growing damage makes delta > 0
        a_big = np.clip(a_n + 0.3, 0, 1)
        rep = check_two_sided(0, u, u_d, a_n, u, u_d, a_big, kern, sent_params, eta=1e-9)
        assert rep.delta > rep.ub + rep.eta
        assert not rep.passed

    def test_invariant_of_report(self, patch, sent_params, rng):
        mesh, kern = patch
        u, a, a_n = random_state(mesh, rng)
        ud1 = np.zeros(2 * mesh.n_nodes)
        ud2 = ud1.copy()
        ud2[1::2] = 1e-3 * mesh.nodes[:, 1]
        rep = check_two_sided(0, u, ud1, a_n, u, ud2, a, kern, sent_params, eta=1e-5)
        assert rep.passed == (rep.lb - rep.eta <= rep.delta <= rep.ub + rep.eta)
        assert rep.delta == pytest.approx(rep.e_next - rep.e_curr + rep.d_inc, rel=1e-12)

    def test_eta_must_be_positive(self, patch, sent_params):
        mesh, kern = patch
        z = np.zeros(2 * mesh.n_nodes)
        a = np.zeros(mesh.n_nodes)
        with pytest.raises(ValueError):
            check_two_sided(0, z, z, a, z, z, a, kern, sent_params, eta=0.0)


def test_penalty_energy_zero_iff_admissible(patch, sent_params, rng):
    mesh, kern = patch
    a_n = rng.uniform(0, 0.5, mesh.n_nodes)
    assert penalty_energy(a_n + 0.1, a_n, kern, sent_params) == 0.0
    assert penalty_energy(a_n - 0.1, a_n, kern, sent_params) > 0.0
