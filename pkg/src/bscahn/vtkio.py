"""Legacy-ASCII VTK output for triangle meshes.

The simplest dialect any visualizer understands: an UNSTRUCTURED_GRID with
2D points embedded at z=0, triangle cells, and named scalar point data.
"""

from __future__ import annotations

import numpy as np


def write_vtk(path: str, mesh, point_data: dict[str, np.ndarray], title: str = "bscahn") -> None:
    """Write the bulk triangulation and nodal scalars to ``path``.

    ``point_data`` maps field names to per-vertex arrays; surface-only fields
    are scattered onto the bulk nodes (zero off the boundary) by the caller.
    """
    verts = mesh.vertices
    tris = mesh.triangles
    n, nt = len(verts), len(tris)
    for name, arr in point_data.items():
        if len(arr) != n:
            raise ValueError(f"point data {name!r} has {len(arr)} entries, mesh has {n} vertices")
    lines = [
        "# vtk DataFile Version 2.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines.extend(f"{float(x)!r} {float(y)!r} 0.0" for x, y in verts)
    lines.append(f"CELLS {nt} {4 * nt}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in tris)
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    lines.append(f"POINT_DATA {n}")
    for name, arr in point_data.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(repr(float(v)) for v in arr)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
