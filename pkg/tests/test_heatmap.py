import numpy as np
import pandas as pd
import pytest
from matplotlib import colormaps

from conftest import read_ppm, unflatten
from dptrn.errors import DimensionError
from dptrn.heatmap import (
    HeatmapGrid,
    render_rgb,
    symmetric_bounds,
    write_grid_csv,
    write_ppm,
)
from dptrn.shared_config import HEATMAP_ABSENT_RGB, HEATMAP_COLORMAP


@pytest.mark.parametrize("n, rows, cols", [(1, 1, 1), (2, 1, 2), (29, 5, 6), (99, 10, 10), (100, 10, 10)])
def test_near_square_layout(n, rows, cols):
    heatmap = HeatmapGrid.layout(np.arange(n, dtype=float))
    assert (heatmap.rows, heatmap.cols) == (rows, cols)


def test_cells_run_left_to_right_then_down():
    values = np.arange(1.0, 30.0)
    heatmap = HeatmapGrid.layout(values)
    grid = heatmap.grid()
    assert grid[0, 1] == 2.0 and grid[1, 0] == 7.0
    assert np.isnan(grid[-1, -1])
    assert heatmap.present().sum() == 29
    np.testing.assert_array_equal(unflatten(grid, 29), values)


def test_bounds_are_symmetric():
    assert symmetric_bounds(np.array([-0.5, 2.0])) == (-2.0, 2.0)
    assert symmetric_bounds(np.zeros(4)) == (-1.0, 1.0)


def test_empty_values():
    with pytest.raises(DimensionError):
        HeatmapGrid.layout(np.zeros(0))


def test_rendered_colours_follow_the_colormap():
    heatmap = HeatmapGrid.layout(np.array([-3.0, 0.0, 3.0]))
    rgb = render_rgb(heatmap, cell_px=4)
    assert rgb.shape == (8, 8, 3) and rgb.dtype == np.uint8
    cmap = colormaps[HEATMAP_COLORMAP]
    np.testing.assert_array_equal(rgb[0, 0], cmap(0.0, bytes=True)[:3])
    np.testing.assert_array_equal(rgb[4, 0], cmap(1.0, bytes=True)[:3])
    np.testing.assert_array_equal(rgb[7, 7], HEATMAP_ABSENT_RGB)


def test_ppm_round_trip(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, size=(6, 4, 3), dtype=np.uint8)
    path = write_ppm(rgb, tmp_path / "x.ppm")
    assert path.read_bytes().startswith(b"P6\n4 6\n255\n")
    np.testing.assert_array_equal(read_ppm(path), rgb)


def test_grid_csv_leaves_absent_cells_empty(tmp_path):
    heatmap = HeatmapGrid.layout(np.array([0.25, -1.5, 2.0]))
    path = write_grid_csv(heatmap, tmp_path / "g.csv")
    assert path.read_text().splitlines() == ["0.25,-1.5", "2.0,"]
    grid = pd.read_csv(path, header=None).to_numpy()
    np.testing.assert_array_equal(unflatten(grid, 3), [0.25, -1.5, 2.0])
