"""Legacy-format VTK output of cell fields on the structured grid."""

from __future__ import annotations

import os

import numpy as np

from .grid import FineGrid


def write_vtk_cell_fields(path, grid: FineGrid, fields: dict[str, np.ndarray]) -> None:
    """Write named cell fields as an ASCII legacy VTK structured-points file.

    Values are written with repr precision so a reader recovers the exact
    float64 bits. Cell ordering matches the grid (x fastest).
    """
    hx, hy = grid.spacing
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as fp:
        fp.write("# vtk DataFile Version 3.0\n")
        fp.write("cell fields\n")
        fp.write("ASCII\n")
        fp.write("DATASET STRUCTURED_POINTS\n")
        fp.write(f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} 1\n")
        fp.write("ORIGIN 0 0 0\n")
        fp.write(f"SPACING {hx:.17g} {hy:.17g} 1\n")
        fp.write(f"CELL_DATA {grid.n_cells}\n")
        for name, values in fields.items():
            values = np.asarray(values, dtype=float)
            if values.size != grid.n_cells:
                raise ValueError(f"field {name!r} has {values.size} values, grid has {grid.n_cells} cells")
            fp.write(f"SCALARS {name} double 1\n")
            fp.write("LOOKUP_TABLE default\n")
            fp.write("\n".join(f"{v:.17g}" for v in values))
            fp.write("\n")
