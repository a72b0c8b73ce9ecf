import numpy as np
import pytest

from video_ingest.grid import GRID_CELLS, RoiGrid


class TestRoiGrid:
    def test_default_is_10_by_10(self):
        grid = RoiGrid()
        bounds = grid.cell_bounds(200)
        assert len(bounds) == GRID_CELLS == 100

    def test_cells_non_overlapping_and_covering(self):
        grid = RoiGrid()
        size = 203  # not divisible by 10: rounding must still tile exactly
        coverage = np.zeros((size, size), dtype=int)
        for y0, y1, x0, x1 in grid.cell_bounds(size):
            assert y1 > y0 and x1 > x0
            coverage[y0:y1, x0:x1] += 1
        assert coverage.min() == 1 and coverage.max() == 1

    def test_cell_count_must_be_100(self):
        with pytest.raises(ValueError):
            RoiGrid(rows=10, cols=5)
        RoiGrid(rows=20, cols=5)  # 100 cells, allowed

    def test_mean_rgb_per_cell(self):
        grid = RoiGrid()
        crop = np.zeros((200, 200, 3))
        crop[:20, :20] = (1.0, 2.0, 3.0)  # first cell exactly
        means = grid.mean_rgb(crop)
        np.testing.assert_allclose(means[0], [1.0, 2.0, 3.0])
        np.testing.assert_allclose(means[1], 0.0)

    def test_skin_mask_zeroes_excluded_cells(self):
        mask = [True] * 100
        mask[7] = False
        grid = RoiGrid(skin_mask=tuple(mask))
        crop = np.full((200, 200, 3), 9.0)
        means = grid.mean_rgb(crop)
        np.testing.assert_allclose(means[7], 0.0)
        np.testing.assert_allclose(means[8], 9.0)
        assert means.shape == (100, 3)  # channel count preserved
