"""ROI grid placement over the aligned face crop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRID_CELLS = 100


@dataclass(frozen=True)
class RoiGrid:
    """Uniform rows x cols grid of non-overlapping cells, 100 cells total.

    ``skin_mask`` optionally excludes cells; excluded cells emit constant
    zeros so the downstream channel count stays fixed (they surface as
    flagged degenerate channels there).
    """

    rows: int = 10
    cols: int = 10
    skin_mask: tuple[bool, ...] | None = None

    def __post_init__(self):
        if self.rows * self.cols != GRID_CELLS:
            raise ValueError(
                f"grid must have exactly {GRID_CELLS} cells, got {self.rows}x{self.cols}"
            )
        if self.skin_mask is not None and len(self.skin_mask) != GRID_CELLS:
            raise ValueError("skin_mask must have one flag per cell")

    def cell_bounds(self, size: int) -> list[tuple[int, int, int, int]]:
        """(y0, y1, x0, x1) per cell in row-major order over a size x size crop."""
        ys = [round(r * size / self.rows) for r in range(self.rows + 1)]
        xs = [round(c * size / self.cols) for c in range(self.cols + 1)]
        bounds = []
        for r in range(self.rows):
            for c in range(self.cols):
                bounds.append((ys[r], ys[r + 1], xs[c], xs[c + 1]))
        return bounds

    def mean_rgb(self, crop_rgb: np.ndarray) -> np.ndarray:
        """Per-cell mean R,G,B of a square crop; shape (100, 3)."""
        size = crop_rgb.shape[0]
        if crop_rgb.shape[0] != crop_rgb.shape[1] or crop_rgb.shape[2] != 3:
            raise ValueError(f"crop must be square RGB, got {crop_rgb.shape}")
        out = np.empty((GRID_CELLS, 3))
        for i, (y0, y1, x0, x1) in enumerate(self.cell_bounds(size)):
            if self.skin_mask is not None and not self.skin_mask[i]:
                out[i] = 0.0
            else:
                out[i] = crop_rgb[y0:y1, x0:x1].reshape(-1, 3).mean(axis=0)
        return out
