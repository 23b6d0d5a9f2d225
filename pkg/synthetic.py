# synthetic.py
"""
Synthetic echograms with known ground truth.

Scene contents:
- background Sv ~ N(-85, 3) dB, angle counts uniform in [-10, 10]
- a horizontal -65 dB scattering layer, same incoherent angles
- a diagonal alias band, `band_height` samples tall, Sv -55 +/- 1 dB, whose
  along-ship counts ramp 40..60 down the band with the sign of its slope

The band is drawn over the layer where the two cross.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from echogram import AngleChannels, Echogram, GridBundle
from errors import ParameterError


@dataclass(frozen=True)
class SceneTruth:
    band: np.ndarray
    layer: np.ndarray
    crossing: np.ndarray


def make_alias_scene(
    rows: int = 600,
    cols: int = 600,
    seed: int = 0,
    band_height: int = 60,
    layer_height: int = 20,
    layer_top: Optional[int] = None,
    margin: int = 20,
    descending: bool = True,
    range_step: float = 0.5,
    frequency: float = 38.0,
) -> Tuple[GridBundle, SceneTruth]:
    if rows < band_height + 2 * margin + 1 or cols < 2:
        raise ParameterError(f"scene {rows}x{cols} too small for a {band_height}-sample band")
    rng = np.random.default_rng(seed)

    sv = rng.normal(-85.0, 3.0, size=(rows, cols))
    along = rng.integers(-10, 11, size=(rows, cols))
    athwart = rng.integers(-10, 11, size=(rows, cols))

    top_row = rows // 2 if layer_top is None else int(layer_top)
    layer = np.zeros((rows, cols), dtype=bool)
    layer[top_row:top_row + layer_height, :] = True
    sv[layer] = -65.0 + rng.uniform(-1.0, 1.0, size=int(layer.sum()))

    slope = (rows - band_height - 2 * margin) / cols
    j = np.arange(cols)
    if descending:
        top = margin + np.round(slope * j).astype(int)
    else:
        top = margin + np.round(slope * (cols - 1 - j)).astype(int)
    i = np.arange(rows)[:, None]
    offset = i - top[None, :]
    band = (offset >= 0) & (offset < band_height)

    sign = 1 if descending else -1
    ramp = np.round(40.0 + 20.0 * offset / max(band_height - 1, 1)).astype(np.int64)
    along = np.where(band, sign * ramp, along)
    sv[band] = -55.0 + rng.uniform(-1.0, 1.0, size=int(band.sum()))

    echogram = Echogram(
        sv=sv,
        range_step=range_step,
        frequency=frequency,
        ping_interval=1.0,
    )
    bundle = GridBundle(echogram, AngleChannels(along, athwart))
    return bundle, SceneTruth(band=band, layer=layer, crossing=band & layer)


def make_quiet_scene(rows: int = 100, cols: int = 80, seed: int = 0) -> GridBundle:
    """Background noise and a layer, all split-beam angles zero."""
    rng = np.random.default_rng(seed)
    sv = rng.normal(-85.0, 3.0, size=(rows, cols))
    sv[rows // 2:rows // 2 + 10, :] = -65.0
    zeros = np.zeros((rows, cols), dtype=np.int64)
    return GridBundle(Echogram(sv=sv, range_step=0.5, frequency=38.0), AngleChannels(zeros, zeros))
