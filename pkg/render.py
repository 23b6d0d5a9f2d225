# render.py
"""
Echogram / mask -> RGB image, for visual checks of detection results.

The image is the data area only (no axes or labels): row 0 at the top,
one input cell per scale x scale pixel block.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import matplotlib
import numpy as np
from PIL import Image

from echogram import Echogram, Mask
from errors import ParameterError, ShapeMismatchError


LOG = logging.getLogger("render")

_LUT_SIZE = 256


@dataclass(frozen=True)
class RenderOptions:
    sv_min: float = -90.0
    sv_max: float = -30.0
    colormap: str = "viridis"
    overlay_color: Tuple[int, int, int, int] = (255, 0, 0, 128)
    no_data_color: Tuple[int, int, int] = (128, 128, 128)
    scale: int = 1

    def __post_init__(self):
        if not (self.sv_min < self.sv_max):
            raise ParameterError(f"sv_min ({self.sv_min}) must be below sv_max ({self.sv_max})")
        if int(self.scale) < 1:
            raise ParameterError(f"scale must be >= 1, got {self.scale}")
        for name, color, n in (("overlay_color", self.overlay_color, 4), ("no_data_color", self.no_data_color, 3)):
            if len(color) != n or any(not 0 <= int(c) <= 255 for c in color):
                raise ParameterError(f"{name} needs {n} channels in 0..255, got {color!r}")


def colormap_lut(name: str) -> np.ndarray:
    """256 x 3 uint8 lookup table from a matplotlib colormap."""
    try:
        cmap = matplotlib.colormaps[name]
    except KeyError:
        raise ParameterError(f"unknown colormap {name!r}") from None
    rgba = cmap(np.linspace(0.0, 1.0, _LUT_SIZE))
    return np.round(rgba[:, :3] * 255.0).astype(np.uint8)


def render_echogram(e: Echogram, m: Optional[Mask] = None, o: Optional[RenderOptions] = None) -> np.ndarray:
    """Return an (rows*scale, cols*scale, 3) uint8 image."""
    o = o or RenderOptions()
    if m is not None and m.shape != e.shape:
        raise ShapeMismatchError("render mask vs echogram", m.shape, e.shape)

    lut = colormap_lut(o.colormap)
    valid = e.valid_mask()
    frac = (np.clip(e.sv, o.sv_min, o.sv_max) - o.sv_min) / (o.sv_max - o.sv_min)
    idx = np.round(frac * (_LUT_SIZE - 1)).astype(np.intp)
    rgb = lut[idx]
    rgb[~valid] = np.asarray(o.no_data_color, dtype=np.uint8)

    if m is not None and m.any():
        alpha = o.overlay_color[3] / 255.0
        overlay = np.asarray(o.overlay_color[:3], dtype=np.float64)
        blended = (1.0 - alpha) * rgb[m.bits].astype(np.float64) + alpha * overlay
        rgb[m.bits] = np.round(blended).astype(np.uint8)

    s = int(o.scale)
    if s > 1:
        rgb = np.repeat(np.repeat(rgb, s, axis=0), s, axis=1)
    return np.ascontiguousarray(rgb)


def write_png(image: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ParameterError(f"expected an HxWx3 uint8 image, got {image.shape} {image.dtype}")
    if image.shape[0] == 0 or image.shape[1] == 0:
        raise ParameterError("cannot write an empty image")
    path.parent.mkdir(parents=True, exist_ok=True)
    # Pillow writes no tIME chunk unless asked, so output bytes depend on pixels only.
    Image.fromarray(image).save(path, format="PNG")
    LOG.info("PNG written | path=%s | size=%sx%s", path, image.shape[1], image.shape[0])
    return path
