"""Polar grid geometry, area weighting and the polar fold used before the network.

Row index 0 is the southernmost latitude band (``lat_start_deg``); rows
increase northward towards the pole.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

EARTH_RADIUS_KM = 6371.0


@dataclass(eq=False)
class PolarGrid:
    """Regular latitude/longitude grid north of ``lat_start_deg``.

    Parameters
    ----------
    n_lat, n_lon : int
        Grid dimensions. ``n_lon`` must be even for the polar fold.
    lat_start_deg : float
        Southern edge of the first row.
    cell_size_deg : float, optional
        Latitude step. Defaults to covering ``lat_start_deg`` up to the pole.
    land_mask : ndarray of bool, optional
        True marks land or otherwise invalid cells.
    """

    n_lat: int = 50
    n_lon: int = 360
    lat_start_deg: float = 50.0
    cell_size_deg: float | None = None
    land_mask: np.ndarray | None = None
    _area: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.n_lat < 1 or self.n_lon < 2:
            raise ValueError(f"grid too small: {self.n_lat}x{self.n_lon}")
        if self.n_lon % 2:
            raise ValueError(f"n_lon must be even for the polar fold, got {self.n_lon}")
        if self.cell_size_deg is None:
            self.cell_size_deg = (90.0 - self.lat_start_deg) / self.n_lat
        if self.land_mask is None:
            self.land_mask = np.zeros(self.shape, dtype=bool)
        self.land_mask = np.asarray(self.land_mask, dtype=bool)
        if self.land_mask.shape != self.shape:
            raise ValueError(f"land_mask shape {self.land_mask.shape} != grid shape {self.shape}")
        self.land_mask.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    @property
    def folded_shape(self) -> tuple[int, int]:
        return (2 * self.n_lat, self.n_lon // 2)

    @property
    def ocean(self) -> np.ndarray:
        return ~self.land_mask

    @property
    def lat_centers(self) -> np.ndarray:
        return self.lat_start_deg + (np.arange(self.n_lat) + 0.5) * self.cell_size_deg

    @property
    def lon_centers(self) -> np.ndarray:
        step = 360.0 / self.n_lon
        return (np.arange(self.n_lon) + 0.5) * step

    @property
    def cell_area(self) -> np.ndarray:
        """Cell areas in km², R² Δφ Δλ cos(φ_center)."""
        if self._area is None:
            dphi = np.deg2rad(self.cell_size_deg)
            dlam = 2.0 * np.pi / self.n_lon
            rows = EARTH_RADIUS_KM**2 * dphi * dlam * np.cos(np.deg2rad(self.lat_centers))
            area = np.repeat(rows[:, None], self.n_lon, axis=1)
            area.setflags(write=False)
            self._area = area
        return self._area

    def to_dict(self) -> dict:
        return {
            "n_lat": self.n_lat,
            "n_lon": self.n_lon,
            "lat_start_deg": self.lat_start_deg,
            "cell_size_deg": self.cell_size_deg,
            "land_cells": np.flatnonzero(self.land_mask).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolarGrid":
        mask = np.zeros(d["n_lat"] * d["n_lon"], dtype=bool)
        mask[np.asarray(d.get("land_cells", []), dtype=np.int64)] = True
        return cls(
            n_lat=int(d["n_lat"]),
            n_lon=int(d["n_lon"]),
            lat_start_deg=float(d["lat_start_deg"]),
            cell_size_deg=float(d["cell_size_deg"]),
            land_mask=mask.reshape(d["n_lat"], d["n_lon"]),
        )

    def same_geometry(self, other: "PolarGrid") -> bool:
        return (
            self.shape == other.shape
            and self.lat_start_deg == other.lat_start_deg
            and self.cell_size_deg == other.cell_size_deg
            and np.array_equal(self.land_mask, other.land_mask)
        )


def make_land_mask(n_lat, n_lon, fraction=0.1, pole_hole_rows=0, seed=0, smoothing=2.0):
    """Random smooth land blobs covering roughly ``fraction`` of the cells.

    ``pole_hole_rows`` northernmost rows are masked as well, mimicking the
    satellite pole hole.
    """
    mask = np.zeros((n_lat, n_lon), dtype=bool)
    if fraction > 0:
        rng = np.random.default_rng(seed)
        noise = ndimage.gaussian_filter(
            rng.standard_normal((n_lat, n_lon)), smoothing, mode=("nearest", "wrap")
        )
        mask = noise > np.quantile(noise, 1.0 - fraction)
    if pole_hole_rows:
        mask[-pole_hole_rows:, :] = True
    return mask


@dataclass
class FoldedField:
    values: np.ndarray
    valid_mask: np.ndarray


def _check_field(field, grid):
    field = np.asarray(field)
    if field.shape[-2:] != grid.shape:
        raise ValueError(f"field shape {field.shape[-2:]} does not match grid {grid.shape}")
    return field


def fold_array(a: np.ndarray) -> np.ndarray:
    """Fold the trailing (lat, lon) axes into (2*lat, lon/2).

    The eastern longitude half is flipped in latitude and stacked after the
    western half along the latitude axis, so both halves meet at the pole.
    """
    n_lon = a.shape[-1]
    if n_lon % 2:
        raise ValueError(f"cannot fold odd number of longitudes ({n_lon})")
    half = n_lon // 2
    return np.concatenate([a[..., :, :half], a[..., ::-1, half:]], axis=-2)


def unfold_array(a: np.ndarray) -> np.ndarray:
    rows = a.shape[-2]
    if rows % 2:
        raise ValueError(f"folded field must have an even number of rows, got {rows}")
    n_lat = rows // 2
    return np.concatenate([a[..., :n_lat, :], a[..., n_lat:, :][..., ::-1, :]], axis=-1)


def fold_polar(field: np.ndarray, grid: PolarGrid) -> FoldedField:
    field = _check_field(field, grid)
    return FoldedField(values=fold_array(field), valid_mask=fold_array(grid.ocean))


def unfold_polar(folded: FoldedField | np.ndarray, grid: PolarGrid) -> np.ndarray:
    values = folded.values if isinstance(folded, FoldedField) else np.asarray(folded)
    if values.shape[-2:] != grid.folded_shape:
        raise ValueError(f"folded shape {values.shape[-2:]} != expected {grid.folded_shape}")
    return unfold_array(values)


def area_weighted_mean(field, weights, mask=None):
    """Area-weighted mean over cells where ``mask`` is True.

    ``field`` may carry leading axes; the weighting acts on the last two.
    """
    field = np.asarray(field, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if mask is None:
        mask = np.ones(weights.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if field.shape[-2:] != weights.shape or mask.shape != weights.shape:
        raise ValueError("field, weights and mask shapes do not match")
    w = np.where(mask, weights, 0.0)
    total = w.sum()
    if total <= 0:
        raise ValueError("area_weighted_mean: every cell is masked")
    return np.where(mask, field, 0.0).reshape(*field.shape[:-2], -1) @ w.ravel() / total
