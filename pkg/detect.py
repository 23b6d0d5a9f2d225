# detect.py
"""
Aliased-seabed detection on a single-frequency split-beam echogram.

Steps:
1. mean square of along-ship counts over a w_along x w_along window, > t_theta -> m1
2. mean square of athwart-ship counts over a w_athwart x w_athwart window, > t_phi -> m2
3. m = m1 | m2
4. T = median Sv under m, optionally floored at t_min
5. keep the connected regions of Sv > T that touch m; result = regions | m

followed by optional hole filling and clearing of pings whose true seabed
was detected (an alias cannot coexist with a detected true seabed).

Window statistics use summed-area tables, so every cell costs O(1)
regardless of window size.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from alias_geometry import AliasGeometry, alias_period, candidate_true_depths
from detect_config import DetectionConfig
from echogram import AngleChannels, Echogram, Mask, SeabedLine
from errors import ParameterError, ShapeMismatchError


LOG = logging.getLogger("detect")

# Columns per tile when the window statistics run on several threads.
_TILE_COLS = 256


@dataclass(frozen=True)
class DetectionResult:
    mask: Mask
    t_used: Optional[float]
    m_angle: Mask

    def __post_init__(self):
        if self.mask.shape != self.m_angle.shape:
            raise ShapeMismatchError("final mask vs angle mask", self.mask.shape, self.m_angle.shape)
        if np.any(self.m_angle.bits & ~self.mask.bits):
            raise ParameterError("angle mask must be contained in the final mask")


def _structure(connectivity: int) -> np.ndarray:
    if connectivity not in (4, 8):
        raise ParameterError(f"connectivity must be 4 or 8, got {connectivity}")
    return ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)


# ===============================
# Window statistics
# ===============================

def _integral(grid: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.shape[0] + 1, grid.shape[1] + 1), dtype=np.int64)
    out[1:, 1:] = grid.cumsum(axis=0).cumsum(axis=1)
    return out


def _window_bounds(n: int, w: int) -> Tuple[np.ndarray, np.ndarray]:
    # Window at i spans [i - floor(w/2), i + ceil(w/2) - 1], clipped; upper bound exclusive.
    idx = np.arange(n)
    lo = np.clip(idx - w // 2, 0, n)
    hi = np.clip(idx + (w + 1) // 2, 0, n)
    return lo, hi


def _box_sum(table: np.ndarray, r0, r1, c0, c1) -> np.ndarray:
    return (
        table[np.ix_(r1, c1)]
        - table[np.ix_(r0, c1)]
        - table[np.ix_(r1, c0)]
        + table[np.ix_(r0, c0)]
    )


def _column_tiles(cols: int, workers: int) -> List[Tuple[int, int]]:
    if workers <= 1:
        return [(0, cols)]
    step = max(1, min(_TILE_COLS, -(-cols // workers)))
    return [(a, min(a + step, cols)) for a in range(0, cols, step)]


def mean_square_window(
    grid: np.ndarray,
    w: int,
    valid: Optional[np.ndarray] = None,
    workers: int = 1,
) -> np.ndarray:
    """
    Mean of v^2 over the w x w window around every cell, valid cells only.

    Windows are clipped at the grid edges and normalised by the number of
    valid in-bounds cells; cells whose window holds no valid cell are NaN.
    """
    w = int(w)
    if w < 1:
        raise ParameterError(f"window side must be >= 1, got {w}")
    values = np.asarray(grid)
    if values.ndim != 2 or values.size == 0:
        raise ParameterError(f"window statistics need a non-empty 2-D grid, got shape {values.shape}")
    ok = np.ones(values.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if ok.shape != values.shape:
        raise ShapeMismatchError("grid vs validity", values.shape, ok.shape)

    v = values.astype(np.int64)
    sq_table = _integral(np.where(ok, v * v, 0))
    n_table = _integral(ok.astype(np.int64))

    rows, cols = values.shape
    r0, r1 = _window_bounds(rows, w)
    c0, c1 = _window_bounds(cols, w)
    out = np.empty(values.shape, dtype=np.float64)

    def _tile(bounds: Tuple[int, int]) -> None:
        a, b = bounds
        sums = _box_sum(sq_table, r0, r1, c0[a:b], c1[a:b])
        counts = _box_sum(n_table, r0, r1, c0[a:b], c1[a:b])
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, a:b] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    tiles = _column_tiles(cols, int(workers))
    if len(tiles) == 1:
        _tile(tiles[0])
    else:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            list(pool.map(_tile, tiles))
    return out


# ===============================
# Algorithm steps
# ===============================

def angle_mask(angles: AngleChannels, cfg: DetectionConfig) -> Mask:
    ms_along = mean_square_window(angles.along, cfg.window_along, angles.valid, cfg.workers)
    ms_athwart = mean_square_window(angles.athwart, cfg.window_athwart, angles.valid, cfg.workers)
    # NaN (no valid cell in the window) compares False.
    m1 = ms_along > cfg.t_theta
    m2 = ms_athwart > cfg.t_phi
    return Mask(m1 | m2)


def dynamic_threshold(
    e: Echogram,
    m: Mask,
    t_min: Optional[float] = None,
    rank: float = 50.0,
) -> Optional[float]:
    if e.shape != m.shape:
        raise ShapeMismatchError("dynamic_threshold", e.shape, m.shape)
    selection = e.sv[m.bits & e.valid_mask()]
    if selection.size == 0:
        return None
    if rank == 50:
        t = float(np.median(selection))
    else:
        t = float(np.percentile(selection, rank))
    if t_min is not None:
        t = max(t, float(t_min))
    return t


def grow_regions(
    e: Echogram,
    m: Mask,
    t: float,
    connectivity: int = 4,
    within: Optional[np.ndarray] = None,
) -> Mask:
    """Union of m and every connected Sv > t region that touches m."""
    if e.shape != m.shape:
        raise ShapeMismatchError("grow_regions", e.shape, m.shape)
    candidates = e.valid_mask() & (e.sv > t)
    if within is not None:
        candidates &= within
    labels, n = ndimage.label(candidates, structure=_structure(connectivity))
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[m.bits])] = True
    keep[0] = False
    return Mask(keep[labels] | m.bits)


def fill_holes(m: Mask) -> Mask:
    """Set every 4-connected false region that cannot reach the border."""
    bits = m.bits
    if bits.size == 0:
        return m
    background = ~bits
    labels, n = ndimage.label(background, structure=_structure(4))
    edge = np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
    reaches_border = np.zeros(n + 1, dtype=bool)
    reaches_border[np.unique(edge)] = True
    holes = background & ~reaches_border[labels]
    return Mask(bits | holes)


def exclude_below_seabed(m: Mask, seabed: SeabedLine, range_step: float) -> Mask:
    if len(seabed) != m.shape[1]:
        raise ShapeMismatchError("seabed length vs mask columns", (len(seabed),), (m.shape[1],))
    seabed.check_within(m.shape[0] * range_step)
    bits = np.array(m.bits, copy=True)
    bits[:, seabed.present] = False
    return Mask(bits)


def filter_implausible_regions(
    m: Mask,
    range_step: float,
    geometry: AliasGeometry,
    frequency: float,
    connectivity: int = 4,
) -> Mask:
    """
    Drop angle-mask regions that cannot be an alias: their mean range must be
    below c*I_T/2 and map back to at least one seabed depth R_L < R_S < R_max.
    """
    labels, n = ndimage.label(m.bits, structure=_structure(connectivity))
    if n == 0:
        return m
    row_index = np.broadcast_to(np.arange(m.shape[0], dtype=np.float64)[:, None], m.shape)
    mean_rows = ndimage.mean(row_index, labels=labels, index=np.arange(1, n + 1))
    period = alias_period(geometry)

    keep = np.zeros(n + 1, dtype=bool)
    for i, mean_row in enumerate(np.atleast_1d(mean_rows), start=1):
        r_a = float(mean_row) * range_step
        keep[i] = r_a < period and bool(candidate_true_depths(r_a, geometry, frequency))
    dropped = n - int(keep.sum())
    if dropped:
        LOG.debug("Geometry filter | regions=%s | dropped=%s", n, dropped)
    return Mask(keep[labels])


def _search_scope(e: Echogram, cfg: DetectionConfig) -> np.ndarray:
    r = e.range_axis()
    rows_ok = np.ones(e.rows, dtype=bool)
    if cfg.r_min is not None:
        rows_ok &= r >= cfg.r_min
    if cfg.r_max is not None:
        rows_ok &= r <= cfg.r_max
    return np.broadcast_to(rows_ok[:, None], e.shape)


def detect_aliased_seabed(
    e: Echogram,
    angles: AngleChannels,
    seabed: Optional[SeabedLine] = None,
    cfg: Optional[DetectionConfig] = None,
    geometry: Optional[AliasGeometry] = None,
) -> DetectionResult:
    cfg = cfg or DetectionConfig()
    if angles.shape != e.shape:
        raise ShapeMismatchError("angle channels vs echogram", angles.shape, e.shape)
    if seabed is not None and len(seabed) != e.cols:
        raise ShapeMismatchError("seabed length vs pings", (len(seabed),), (e.cols,))
    if cfg.geometry_filter and geometry is None:
        raise ParameterError("geometry_filter needs an AliasGeometry (ping interval and logging range)")

    t0 = time.perf_counter()
    if e.rows == 0 or e.cols == 0:
        empty = Mask.empty(e.shape)
        return DetectionResult(empty, None, empty)

    valid = e.valid_mask() & angles.valid
    scope = valid & _search_scope(e, cfg)

    m = angle_mask(angles.restricted_to(valid), cfg)
    m = Mask(m.bits & scope)
    if cfg.geometry_filter:
        m = filter_implausible_regions(m, e.range_step, geometry, e.frequency, cfg.connectivity)

    if not m.any():
        LOG.debug("Angle mask empty | %.3fs", time.perf_counter() - t0)
        empty = Mask.empty(e.shape)
        return DetectionResult(empty, None, empty)

    t = dynamic_threshold(e, m, cfg.t_min, cfg.rank)
    mask = grow_regions(e, m, t, cfg.connectivity, within=scope)
    if cfg.fill_holes:
        mask = fill_holes(mask)
        # Filled holes may cover no_data or out-of-range cells.
        mask = Mask(mask.bits & scope)
    if seabed is not None:
        mask = exclude_below_seabed(mask, seabed, e.range_step)
        m = exclude_below_seabed(m, seabed, e.range_step)

    LOG.debug(
        "Detect | T=%.2f | angle_cells=%s | cells=%s | %.3fs",
        t,
        int(m.bits.sum()),
        int(mask.bits.sum()),
        time.perf_counter() - t0,
    )
    return DetectionResult(mask, t, m)
