"""VTK legacy ASCII snapshots of the simulation fields.

Writes UNSTRUCTURED_GRID files with point data ``displacement`` (total
displacement, 3 components) and ``damage``; values are printed with 17
significant digits so a read-back recovers the arrays bitwise.  These
snapshots are the source of truth for the energy audit.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh

__all__ = ["write_field_snapshot", "read_field_snapshot"]

_CELL_TYPE = {2: 5, 3: 10}  # VTK_TRIANGLE, VTK_TETRA


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_field_snapshot(disp: np.ndarray, damage: np.ndarray, mesh: Mesh, path) -> None:
    """Write total displacement (dim*n_nodes vector) and nodal damage."""
    disp = np.asarray(disp, dtype=np.float64).reshape(mesh.n_nodes, mesh.dim)
    damage = np.asarray(damage, dtype=np.float64)
    if damage.shape != (mesh.n_nodes,):
        raise ValueError("damage must have one value per node")

    nen = mesh.dim + 1
    lines = [
        "# vtk DataFile Version 3.0",
        "pffrac field snapshot",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    for xyz in mesh.nodes:
        coords = list(xyz) + [0.0] * (3 - mesh.dim)
        lines.append(" ".join(_fmt(c) for c in coords))
    lines.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (nen + 1)}")
    for conn in mesh.elements:
        lines.append(f"{nen} " + " ".join(str(int(c)) for c in conn))
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines.extend([str(_CELL_TYPE[mesh.dim])] * mesh.n_elements)
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    lines.append("VECTORS displacement double")
    for row in disp:
        vec = list(row) + [0.0] * (3 - mesh.dim)
        lines.append(" ".join(_fmt(c) for c in vec))
    lines.append("SCALARS damage double 1")
    lines.append("LOOKUP_TABLE default")
    for val in damage:
        lines.append(_fmt(val))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_snapshot(path, dim: int):
    """Read back (displacement, damage) from a snapshot written above.

    Returns the displacement as a flat dim*n_nodes vector.
    """
    with open(path) as fh:
        tokens = fh.read().split("\n")

    i = 0

    def _seek(prefix: str) -> int:
        nonlocal i
        while i < len(tokens) and not tokens[i].startswith(prefix):
            i += 1
        if i >= len(tokens):
            raise ValueError(f"snapshot missing {prefix!r} section")
        return i

    _seek("POINTS")
    n_points = int(tokens[i].split()[1])
    i += 1 + n_points

    _seek("VECTORS displacement")
    i += 1
    disp = np.array(
        [[float(v) for v in tokens[i + k].split()] for k in range(n_points)]
    )
    i += n_points

    _seek("SCALARS damage")
    _seek("LOOKUP_TABLE")
    i += 1
    damage = np.array([float(tokens[i + k]) for k in range(n_points)])
    return disp[:, :dim].reshape(-1), damage
