"""Structured fine grids, coarse grid overlays, inclusion labeling, partition of unity.

The fine grid is cell-centered: solvers only ever see cell volumes, cell
centers and an interior-face list (i, j, length, center distance). Boundary
faces are deliberately absent, which imposes the zero-flux condition by
omission. The coarse grid is a rectangular overlay whose node patches define
the local domains used by the multiscale solver.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

BACKGROUND = 0
INCLUSION = 1


@dataclass(frozen=True)
class FineGrid:
    """Cell-centered rectangular mesh with an interior-face list."""

    nx: int
    ny: int
    domain_extent: tuple[float, float]
    cell_volume: np.ndarray  # (N,)
    cell_center: np.ndarray  # (N, 2)
    face_i: np.ndarray  # (n_faces,) first cell of each interior face
    face_j: np.ndarray  # (n_faces,) second cell
    face_length: np.ndarray  # (n_faces,)
    face_distance: np.ndarray  # (n_faces,) center-to-center distance

    @property
    def n_cells(self) -> int:
        return self.cell_volume.size

    @property
    def n_faces(self) -> int:
        return self.face_i.size

    @property
    def spacing(self) -> tuple[float, float]:
        return self.domain_extent[0] / self.nx, self.domain_extent[1] / self.ny

    def cell_indices(self) -> np.ndarray:
        """Cell ids as an (ny, nx) array; id = iy * nx + ix."""
        return np.arange(self.n_cells).reshape(self.ny, self.nx)


@dataclass(frozen=True)
class SubdomainMap:
    """Per-cell background/inclusion labels plus the generating geometry."""

    labels: np.ndarray  # (N,) uint8, BACKGROUND or INCLUSION
    circles: tuple[tuple[float, float, float], ...]  # (cx, cy, radius)

    @property
    def inclusion_cells(self) -> np.ndarray:
        return np.flatnonzero(self.labels == INCLUSION)

    @property
    def background_cells(self) -> np.ndarray:
        return np.flatnonzero(self.labels == BACKGROUND)


@dataclass(frozen=True)
class CoarseGrid:
    """Rectangular coarse overlay; node patches are the local domains."""

    kx: int
    ky: int
    node_coords: np.ndarray  # (n_nodes, 2)
    patch_cells: list[np.ndarray]  # coarse-cell ids adjacent to each node
    node_fine_cells: list[np.ndarray]  # fine-cell ids covered by each node patch
    fine_cell_coarse: np.ndarray  # (N,) owning coarse cell of each fine cell

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_coarse_cells(self) -> int:
        return self.kx * self.ky


@dataclass(frozen=True)
class PartitionOfUnity:
    """Bilinear hat weights of each coarse node at fine cell centers.

    Stored sparsely: entry c of ``weights[i]`` is the weight of node i at fine
    cell ``cells[i][c]``. Weights over all nodes sum to one at every cell.
    """

    cells: list[np.ndarray]
    weights: list[np.ndarray]

    def node_weights(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        return self.cells[node], self.weights[node]


def build_structured_grid(
    nx: int, ny: int, extent_x: float = 1.0, extent_y: float = 1.0
) -> FineGrid:
    """Uniform nx-by-ny rectangular grid on [0, extent_x] x [0, extent_y]."""
    if nx < 1 or ny < 1:
        raise ValueError(f"grid dimensions must be at least 1, got {nx}x{ny}")
    if extent_x <= 0 or extent_y <= 0:
        raise ValueError(f"domain extents must be positive, got {extent_x}, {extent_y}")

    hx, hy = extent_x / nx, extent_y / ny
    n = nx * ny
    xs = (np.arange(nx) + 0.5) * hx
    ys = (np.arange(ny) + 0.5) * hy
    centers = np.column_stack([np.tile(xs, ny), np.repeat(ys, nx)])
    volumes = np.full(n, hx * hy)

    idx = np.arange(n).reshape(ny, nx)
    # vertical faces separate horizontally adjacent cells, horizontal faces
    # vertically adjacent ones
    vi, vj = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    hi, hj = idx[:-1, :].ravel(), idx[1:, :].ravel()
    face_i = np.concatenate([vi, hi])
    face_j = np.concatenate([vj, hj])
    face_length = np.concatenate([np.full(vi.size, hy), np.full(hi.size, hx)])
    face_distance = np.concatenate([np.full(vi.size, hx), np.full(hi.size, hy)])

    return FineGrid(
        nx=nx,
        ny=ny,
        domain_extent=(float(extent_x), float(extent_y)),
        cell_volume=volumes,
        cell_center=centers,
        face_i=face_i,
        face_j=face_j,
        face_length=face_length,
        face_distance=face_distance,
    )


def mark_inclusions(
    grid: FineGrid, circles: list[tuple[float, float, float]] | tuple
) -> SubdomainMap:
    """Label each cell by a point-in-circle test on its center.

    A center exactly on a circle boundary counts as inside. Overlapping
    circles are fine; the union is labeled.
    """
    labels = np.zeros(grid.n_cells, dtype=np.uint8)
    x, y = grid.cell_center[:, 0], grid.cell_center[:, 1]
    for cx, cy, r in circles:
        labels |= ((x - cx) ** 2 + (y - cy) ** 2 <= r * r).astype(np.uint8)
    return SubdomainMap(labels=labels, circles=tuple((float(a), float(b), float(c)) for a, b, c in circles))


def generate_inclusions(
    seed: int,
    count: int = 24,
    radius_range: tuple[float, float] = (0.03, 0.06),
    extent: tuple[float, float] = (1.0, 1.0),
    boundary_margin: float = 0.02,
    separation: float = 0.01,
    max_attempts: int = 200_000,
) -> tuple[tuple[float, float, float], ...]:
    """Reproducible non-overlapping circle layout via seeded rejection sampling.

    Circles stay fully inside the domain with a boundary margin and keep at
    least ``separation`` between boundaries.
    """
    rng = np.random.default_rng(seed)
    placed: list[tuple[float, float, float]] = []
    attempts = 0
    while len(placed) < count:
        attempts += 1
        if attempts > max_attempts:
            raise ValueError(
                f"could not place {count} circles after {max_attempts} attempts; "
                "reduce count or radius_range"
            )
        r = rng.uniform(*radius_range)
        cx = rng.uniform(boundary_margin + r, extent[0] - boundary_margin - r)
        cy = rng.uniform(boundary_margin + r, extent[1] - boundary_margin - r)
        if all(
            (cx - px) ** 2 + (cy - py) ** 2 >= (r + pr + separation) ** 2
            for px, py, pr in placed
        ):
            placed.append((float(cx), float(cy), float(r)))
    return tuple(placed)


def build_coarse_grid(grid: FineGrid, kx: int, ky: int) -> CoarseGrid:
    """Conforming kx-by-ky coarse overlay of a structured fine grid."""
    if kx < 1 or ky < 1:
        raise ValueError(f"coarse dimensions must be at least 1, got {kx}x{ky}")
    if grid.nx % kx or grid.ny % ky:
        raise ValueError(
            f"coarse grid {kx}x{ky} does not divide fine grid {grid.nx}x{grid.ny}"
        )

    bx, by = grid.nx // kx, grid.ny // ky
    hcx = grid.domain_extent[0] / kx
    hcy = grid.domain_extent[1] / ky
    idx = grid.cell_indices()

    node_coords = np.column_stack(
        [
            np.tile(np.arange(kx + 1) * hcx, ky + 1),
            np.repeat(np.arange(ky + 1) * hcy, kx + 1),
        ]
    )

    patch_cells: list[np.ndarray] = []
    node_fine_cells: list[np.ndarray] = []
    for jy in range(ky + 1):
        for jx in range(kx + 1):
            cxs = np.arange(max(jx - 1, 0), min(jx + 1, kx))
            cys = np.arange(max(jy - 1, 0), min(jy + 1, ky))
            patch = (cys[:, None] * kx + cxs[None, :]).ravel()
            patch_cells.append(patch)
            block = idx[
                by * max(jy - 1, 0) : by * min(jy + 1, ky),
                bx * max(jx - 1, 0) : bx * min(jx + 1, kx),
            ]
            node_fine_cells.append(block.ravel())

    ix = np.arange(grid.n_cells) % grid.nx
    iy = np.arange(grid.n_cells) // grid.nx
    fine_cell_coarse = (iy // by) * kx + (ix // bx)

    return CoarseGrid(
        kx=kx,
        ky=ky,
        node_coords=node_coords,
        patch_cells=patch_cells,
        node_fine_cells=node_fine_cells,
        fine_cell_coarse=fine_cell_coarse,
    )


def build_partition_of_unity(coarse: CoarseGrid, grid: FineGrid) -> PartitionOfUnity:
    """Bilinear hat of each coarse node evaluated at fine cell centers."""
    hcx = grid.domain_extent[0] / coarse.kx
    hcy = grid.domain_extent[1] / coarse.ky
    cells: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    for node in range(coarse.n_nodes):
        fine = coarse.node_fine_cells[node]
        xn, yn = coarse.node_coords[node]
        x = grid.cell_center[fine, 0]
        y = grid.cell_center[fine, 1]
        w = np.maximum(0.0, 1.0 - np.abs(x - xn) / hcx) * np.maximum(
            0.0, 1.0 - np.abs(y - yn) / hcy
        )
        cells.append(fine)
        weights.append(w)
    return PartitionOfUnity(cells=cells, weights=weights)


def geometry_fingerprint(grid: FineGrid, subdomains: SubdomainMap) -> str:
    """Stable hash of the discrete geometry (grid dims, extent, circles)."""
    payload = {
        "nx": grid.nx,
        "ny": grid.ny,
        "extent": list(grid.domain_extent),
        "circles": [list(c) for c in subdomains.circles],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
