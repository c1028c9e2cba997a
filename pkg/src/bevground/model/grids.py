"""Ground-plane grid geometry for BEV feature maps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Square BEV grid over [lo, hi)^2 with a vertical bin stack.

    Cell (iy, ix) covers [lo + ix*cell, lo + (ix+1)*cell) in x and the
    matching interval in y; the grid is H x W with H = W = ceil((hi-lo)/cell).
    """

    lo: float = -54.0
    hi: float = 54.0
    cell: float = 0.6
    z_lo: float = -5.0
    z_hi: float = 3.0
    z_bins: int = 8

    def __post_init__(self):
        if self.hi <= self.lo:
            raise ValueError("grid hi must exceed lo")
        if self.cell <= 0:
            raise ValueError("cell size must be positive")
        if self.z_bins < 1 or self.z_hi <= self.z_lo:
            raise ValueError("invalid vertical binning")

    @property
    def size(self) -> int:
        return int(math.ceil((self.hi - self.lo) / self.cell))

    @property
    def z_step(self) -> float:
        return (self.z_hi - self.z_lo) / self.z_bins

    def cell_center(self, iy, ix):
        """World (x, y) of cell centers; accepts scalars or arrays."""
        x = self.lo + (np.asarray(ix, dtype=np.float64) + 0.5) * self.cell
        y = self.lo + (np.asarray(iy, dtype=np.float64) + 0.5) * self.cell
        return x, y

    def to_dict(self) -> dict:
        return {
            "lo": self.lo, "hi": self.hi, "cell": self.cell,
            "z_lo": self.z_lo, "z_hi": self.z_hi, "z_bins": self.z_bins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**d)


@dataclass
class BEVGrid:
    """Channels-first feature map over a GridSpec."""

    data: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        n = self.spec.size
        if self.data.ndim != 3 or self.data.shape[1] != n or self.data.shape[2] != n:
            raise ValueError(f"grid data shape {self.data.shape} does not match spec size {n}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("grid contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]
