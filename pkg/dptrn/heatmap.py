"""Near-square heatmap grids of per-node weights, written as PPM images and CSV."""

from dataclasses import dataclass
import math
from pathlib import Path
from typing import Tuple

from matplotlib import colormaps
from matplotlib.colors import Normalize
import numpy as np
import pandas as pd

from .errors import DimensionError
from .shared_config import HEATMAP_ABSENT_RGB, HEATMAP_CELL_PX, HEATMAP_COLORMAP


def symmetric_bounds(values: np.ndarray) -> Tuple[float, float]:
    """Colour bounds centred at 0; all-zero input maps to (-1, 1)."""
    bound = float(np.max(np.abs(values))) if np.size(values) else 0.0
    if bound == 0.0:
        bound = 1.0
    return -bound, bound


@dataclass
class HeatmapGrid:
    """Values laid out left to right, top to bottom; trailing cells are absent."""

    values: np.ndarray
    rows: int
    cols: int
    vmin: float
    vmax: float

    @classmethod
    def layout(cls, values: np.ndarray) -> "HeatmapGrid":
        values = np.asarray(values, dtype=np.float64).ravel()
        n = values.size
        if n == 0:
            raise DimensionError("heatmap values", (1,), values.shape)
        cols = math.ceil(math.sqrt(n))
        rows = math.ceil(n / cols)
        vmin, vmax = symmetric_bounds(values)
        return cls(values=values, rows=rows, cols=cols, vmin=vmin, vmax=vmax)

    def grid(self) -> np.ndarray:
        """[rows, cols] array with NaN in the absent cells."""
        cells = np.full(self.rows * self.cols, np.nan)
        cells[: self.values.size] = self.values
        return cells.reshape(self.rows, self.cols)

    def present(self) -> np.ndarray:
        mask = np.zeros(self.rows * self.cols, dtype=bool)
        mask[: self.values.size] = True
        return mask.reshape(self.rows, self.cols)


def render_rgb(heatmap: HeatmapGrid, cell_px: int = HEATMAP_CELL_PX, cmap_name: str = HEATMAP_COLORMAP) -> np.ndarray:
    """Pixel array [rows*cell_px, cols*cell_px, 3] of uint8."""
    cmap = colormaps[cmap_name]
    norm = Normalize(vmin=heatmap.vmin, vmax=heatmap.vmax)
    grid = heatmap.grid()
    colours = cmap(norm(np.nan_to_num(grid)), bytes=True)[..., :3]
    colours[~heatmap.present()] = HEATMAP_ABSENT_RGB
    return np.repeat(np.repeat(colours, cell_px, axis=0), cell_px, axis=1).astype(np.uint8)


def write_ppm(rgb: np.ndarray, path) -> Path:
    """Binary portable pixmap (P6, maxval 255)."""
    path = Path(path)
    height, width, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
    return path


def write_grid_csv(heatmap: HeatmapGrid, path) -> Path:
    """Grid cells as CSV rows without header; absent cells are left empty."""
    path = Path(path)
    pd.DataFrame(heatmap.grid()).to_csv(path, header=False, index=False, na_rep="", lineterminator="\n")
    return path
