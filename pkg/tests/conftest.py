import numpy as np
import pytest

from pffrac.fem import DofMap, build_kernels
from pffrac.material import MaterialParams
from pffrac.mesh import generate_structured


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def sent_params():
    """Material constants of the notched-tension benchmark (kN/mm^2 input)."""
    return MaterialParams.from_lame_kn(
        121.1538, 80.7692, gc=2.7, ell=0.0175, k=1e-4, eps_pen=1e-6
    )


@pytest.fixture
def two_elem():
    """Unit square split into two triangles, with kernels and an
    unconstrained dof map (for gradient checks)."""
    mesh = generate_structured(2, [1.0, 1.0], [1, 1])
    kernels = build_kernels(mesh)
    dofmap = DofMap.from_constraints(mesh, [])
    return mesh, kernels, dofmap


def random_state(mesh, rng, mag=1e-3):
    """Random nodal displacement and admissible damage pair."""
    n_u = mesh.dim * mesh.n_nodes
    u = mag * rng.normal(size=n_u)
    a_n = rng.uniform(0.0, 0.5, mesh.n_nodes)
    a = np.clip(a_n + rng.uniform(-0.2, 0.4, mesh.n_nodes), 0.0, 1.0)
    return u, a, a_n
