"""Volume-weighted observables: subdomain averages and relative L2 errors."""

from __future__ import annotations

import numpy as np

from .grid import BACKGROUND, INCLUSION, FineGrid, SubdomainMap


class SubdomainAverager:
    """Precomputed volume weights for fast per-step subdomain means.

    An empty subdomain yields NaN for its column, flagging the value as
    missing rather than silently reporting zero.
    """

    def __init__(self, grid: FineGrid, subdomains: SubdomainMap):
        self._masks = []
        self._weights = []
        for part in (BACKGROUND, INCLUSION):
            mask = subdomains.labels == part
            vol = grid.cell_volume[mask]
            total = vol.sum()
            self._masks.append(mask)
            self._weights.append(vol / total if vol.size else None)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """Means of u (L, N) over background and inclusions; shape (L, 2)."""
        u = np.atleast_2d(u)
        out = np.full((u.shape[0], 2), np.nan)
        for part, (mask, w) in enumerate(zip(self._masks, self._weights)):
            if w is not None:
                out[:, part] = u[:, mask] @ w
        return out


def compute_averages(
    u: np.ndarray, grid: FineGrid, subdomains: SubdomainMap
) -> tuple[float, float]:
    """Volume-weighted mean of a fine vector over background and inclusions."""
    avg = SubdomainAverager(grid, subdomains)(np.asarray(u, dtype=float))
    return float(avg[0, 0]), float(avg[0, 1])


def weighted_l2(u: np.ndarray, volumes: np.ndarray) -> float:
    """Volume-weighted L2 norm of a fine vector."""
    return float(np.sqrt(np.sum(volumes * np.square(u))))


def compute_relative_l2(u: np.ndarray, u_ref: np.ndarray, grid: FineGrid) -> float:
    """Volume-weighted relative L2 distance of u from the reference field."""
    u = np.asarray(u, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    ref_norm = weighted_l2(u_ref, grid.cell_volume)
    if ref_norm == 0.0:
        raise ValueError("reference field has zero norm")
    return weighted_l2(u_ref - u, grid.cell_volume) / ref_norm
