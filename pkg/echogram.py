# echogram.py
"""
Echogram data model, mask algebra and the grid-bundle directory format.

Grid orientation is fixed everywhere: rows = samples (increasing range),
columns = pings (increasing time). Cells equal to the echogram's `no_data`
value take part in no arithmetic.

Grid bundle layout (one directory):
- meta        JSON object: frequency_khz, range_step_m, no_data, ping_interval_s,
              sound_speed_ms, rows, cols (unknown keys ignored)
- sv          rows lines x cols comma separated reals, row 0 = shallowest
- along       same layout, raw signed split-beam counts
- athwart     same layout
- seabed      optional, one line of cols fields, metres or `*` when absent
- ping_times  optional, one timestamp per line
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import BundleFormatError, ParameterError, ShapeMismatchError


LOG = logging.getLogger("echogram")

NO_DATA = -999.0
ANGLE_MIN = -128
ANGLE_MAX = 127

_META_KEYS = (
    "frequency_khz",
    "range_step_m",
    "no_data",
    "ping_interval_s",
    "sound_speed_ms",
    "rows",
    "cols",
)

PathLike = Union[str, Path]


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


def _check_2d(name: str, arr: np.ndarray) -> None:
    if arr.ndim != 2:
        raise ParameterError(f"{name} must be a 2-D grid, got {arr.ndim} dimension(s)")


@dataclass(frozen=True)
class Echogram:
    sv: np.ndarray
    range_step: float
    frequency: float
    ping_times: Optional[np.ndarray] = None
    no_data: float = NO_DATA
    ping_interval: Optional[float] = None
    sound_speed: float = 1500.0

    def __post_init__(self):
        sv = np.asarray(self.sv, dtype=np.float64)
        _check_2d("sv", sv)
        if not (self.range_step > 0):
            raise ParameterError(f"range_step must be > 0, got {self.range_step!r}")
        if not (self.frequency > 0):
            raise ParameterError(f"frequency must be > 0, got {self.frequency!r}")
        if not math.isfinite(self.no_data):
            raise ParameterError("no_data must be a finite value")
        bad = ~np.isfinite(sv) & (sv != self.no_data)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ParameterError(f"sv cell ({i}, {j}) is neither finite nor no_data")

        if self.ping_times is None:
            times = np.arange(sv.shape[1], dtype=np.int64)
        else:
            times = np.asarray(self.ping_times)
            if times.ndim != 1 or times.shape[0] != sv.shape[1]:
                raise ShapeMismatchError("ping_times length vs columns", times.shape, (sv.shape[1],))
            if times.size > 1 and np.any(np.diff(times) < 0):
                raise ParameterError("ping_times must be non-decreasing")
        if self.ping_interval is not None and not (self.ping_interval > 0):
            raise ParameterError(f"ping_interval must be > 0, got {self.ping_interval!r}")
        if not (self.sound_speed > 0):
            raise ParameterError(f"sound_speed must be > 0, got {self.sound_speed!r}")

        object.__setattr__(self, "sv", _frozen(sv))
        object.__setattr__(self, "ping_times", _frozen(times))
        object.__setattr__(self, "range_step", float(self.range_step))
        object.__setattr__(self, "frequency", float(self.frequency))
        object.__setattr__(self, "no_data", float(self.no_data))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.sv.shape

    @property
    def rows(self) -> int:
        return self.sv.shape[0]

    @property
    def cols(self) -> int:
        return self.sv.shape[1]

    def valid_mask(self) -> np.ndarray:
        return self.sv != self.no_data

    def range_axis(self) -> np.ndarray:
        """Range of every sample row in metres."""
        return np.arange(self.rows, dtype=np.float64) * self.range_step


@dataclass(frozen=True)
class AngleChannels:
    """Along-ship and athwart-ship split-beam angles in raw signed counts."""

    along: np.ndarray
    athwart: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        along = np.asarray(self.along)
        athwart = np.asarray(self.athwart)
        _check_2d("along", along)
        if along.shape != athwart.shape:
            raise ShapeMismatchError("along vs athwart", along.shape, athwart.shape)
        for name, arr in (("along", along), ("athwart", athwart)):
            if arr.size and not np.issubdtype(arr.dtype, np.integer):
                if not np.all(arr == np.round(arr)):
                    raise ParameterError(f"{name} counts must be integers")

        valid = np.ones(along.shape, dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if valid.shape != along.shape:
            raise ShapeMismatchError("angle validity vs grid", valid.shape, along.shape)

        along = along.astype(np.int64)
        athwart = athwart.astype(np.int64)
        for name, arr in (("along", along), ("athwart", athwart)):
            out = valid & ((arr < ANGLE_MIN) | (arr > ANGLE_MAX))
            if out.any():
                i, j = np.argwhere(out)[0]
                raise ParameterError(
                    f"{name} count {arr[i, j]} at ({i}, {j}) outside [{ANGLE_MIN}, {ANGLE_MAX}]"
                )
        # Undefined cells carry 0.
        along[~valid] = 0
        athwart[~valid] = 0

        object.__setattr__(self, "along", _frozen(along.astype(np.int16)))
        object.__setattr__(self, "athwart", _frozen(athwart.astype(np.int16)))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.along.shape

    def restricted_to(self, valid: np.ndarray) -> "AngleChannels":
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != self.shape:
            raise ShapeMismatchError("angle channels vs validity", self.shape, valid.shape)
        return AngleChannels(self.along, self.athwart, self.valid & valid)


@dataclass(frozen=True)
class Mask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        _check_2d("mask", bits)
        object.__setattr__(self, "bits", _frozen(bits))

    @classmethod
    def empty(cls, shape: Tuple[int, int]) -> "Mask":
        return cls(np.zeros(shape, dtype=bool))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bits.shape

    def any(self) -> bool:
        return bool(self.bits.any())


@dataclass(frozen=True)
class SeabedLine:
    """Per-ping seabed range in metres; NaN where no seabed was detected."""

    ranges: np.ndarray

    def __post_init__(self):
        ranges = np.asarray(self.ranges, dtype=np.float64)
        if ranges.ndim != 1:
            raise ParameterError("seabed line must be one-dimensional")
        present = ~np.isnan(ranges)
        if np.any(ranges[present] <= 0) or np.any(np.isinf(ranges[present])):
            raise ParameterError("seabed ranges must be finite and > 0")
        object.__setattr__(self, "ranges", _frozen(ranges))

    @classmethod
    def from_optional(cls, values: Iterable[Optional[float]]) -> "SeabedLine":
        return cls(np.array([np.nan if v is None else float(v) for v in values], dtype=np.float64))

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.ranges)

    def __len__(self) -> int:
        return int(self.ranges.shape[0])

    def check_within(self, max_range: float) -> None:
        if np.any(self.ranges[self.present] > max_range):
            raise ParameterError(f"seabed range exceeds the logged range of {max_range:g} m")


@dataclass(frozen=True)
class GridBundle:
    echogram: Echogram
    angles: AngleChannels
    seabed: Optional[SeabedLine] = None

    def __post_init__(self):
        if self.angles.shape != self.echogram.shape:
            raise ShapeMismatchError("angle channels vs echogram", self.angles.shape, self.echogram.shape)
        if self.seabed is not None:
            if len(self.seabed) != self.echogram.cols:
                raise ShapeMismatchError("seabed length vs pings", (len(self.seabed),), (self.echogram.cols,))
            self.seabed.check_within(self.echogram.rows * self.echogram.range_step)
        # Angles share the echogram's validity.
        object.__setattr__(self, "angles", self.angles.restricted_to(self.echogram.valid_mask()))


# ===============================
# Mask algebra
# ===============================

def _require_same_shape(what: str, a: Tuple[int, ...], b: Tuple[int, ...]) -> None:
    if tuple(a) != tuple(b):
        raise ShapeMismatchError(what, a, b)


def combine_masks(a: Mask, b: Mask) -> Mask:
    _require_same_shape("combine_masks", a.shape, b.shape)
    return Mask(a.bits | b.bits)


def apply_mask(e: Echogram, m: Mask, token: float = NO_DATA) -> Echogram:
    _require_same_shape("apply_mask", e.shape, m.shape)
    if not math.isfinite(token):
        raise ParameterError(f"token must be finite, got {token!r}")
    sv = np.array(e.sv, copy=True)
    sv[m.bits] = token
    return dataclasses.replace(e, sv=sv)


def mask_stats(m: Mask) -> Tuple[int, float]:
    count = int(np.count_nonzero(m.bits))
    total = int(m.bits.size)
    if total == 0:
        return 0, 0.0
    return count, count / total


# ===============================
# Files
# ===============================

def dump_json_atomic(path: Path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    tmp.replace(path)


def _write_grid(path: Path, grid: np.ndarray) -> None:
    if grid.size == 0:
        path.write_text("\n" * grid.shape[0], encoding="utf-8")
        return
    pd.DataFrame(grid).to_csv(path, header=False, index=False, lineterminator="\n")


def _read_grid(path: Path, rows: int, cols: int) -> np.ndarray:
    if not path.is_file():
        raise BundleFormatError(f"missing grid file: {path}")
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols), dtype=np.float64)
    try:
        df = pd.read_csv(path, header=None, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise BundleFormatError(f"{path.name}: not a rectangular numeric grid ({e})") from e
    grid = df.to_numpy()
    if grid.shape != (rows, cols):
        raise BundleFormatError(f"{path.name}: grid is {grid.shape[0]}x{grid.shape[1]}, meta says {rows}x{cols}")
    try:
        grid = grid.astype(np.float64)
    except ValueError as e:
        raise BundleFormatError(f"{path.name}: non-numeric field ({e})") from e
    if np.isnan(grid).any():
        raise BundleFormatError(f"{path.name}: empty or missing fields (ragged rows?)")
    return grid


def write_bundle(path: PathLike, bundle: GridBundle) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    e = bundle.echogram

    meta = {
        "frequency_khz": e.frequency,
        "range_step_m": e.range_step,
        "no_data": e.no_data,
        "ping_interval_s": e.ping_interval,
        "sound_speed_ms": e.sound_speed,
        "rows": e.rows,
        "cols": e.cols,
    }
    dump_json_atomic(out / "meta", meta)
    _write_grid(out / "sv", e.sv)

    # 无效角度单元写成 no_data（若 no_data 落在计数范围内则用 -999）
    marker = int(e.no_data) if (e.no_data == int(e.no_data) and not ANGLE_MIN <= e.no_data <= ANGLE_MAX) else -999
    for name, grid in (("along", bundle.angles.along), ("athwart", bundle.angles.athwart)):
        counts = grid.astype(np.int64)
        counts[~bundle.angles.valid] = marker
        _write_grid(out / name, counts)

    seabed_path = out / "seabed"
    if bundle.seabed is not None:
        fields = ["*" if math.isnan(v) else repr(float(v)) for v in bundle.seabed.ranges]
        seabed_path.write_text(",".join(fields) + "\n", encoding="utf-8")
    elif seabed_path.exists():
        seabed_path.unlink()

    if np.issubdtype(e.ping_times.dtype, np.integer):
        times = "".join(f"{int(t)}\n" for t in e.ping_times)
    else:
        times = "".join(f"{float(t)!r}\n" for t in e.ping_times)
    (out / "ping_times").write_text(times, encoding="utf-8")
    LOG.debug("Bundle written | path=%s | shape=%sx%s", out, e.rows, e.cols)
    return out


def _load_meta(path: Path) -> dict:
    meta_path = path / "meta"
    if not meta_path.is_file():
        raise BundleFormatError(f"not a grid bundle (no meta file): {path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise BundleFormatError(f"meta is not valid JSON: {e}") from e
    if not isinstance(meta, dict):
        raise BundleFormatError("meta must be a JSON object")
    missing = [k for k in _META_KEYS if k not in meta]
    if missing:
        raise BundleFormatError(f"meta is missing keys: {', '.join(missing)}")
    return meta


def _read_seabed(path: Path, cols: int) -> Optional[SeabedLine]:
    if not path.is_file():
        return None
    text = path.read_text(encoding="utf-8").strip()
    fields = [f.strip() for f in text.split(",")] if text else []
    if len(fields) != cols:
        raise BundleFormatError(f"seabed has {len(fields)} fields, expected {cols}")
    values = []
    for f in fields:
        if f == "*":
            values.append(None)
            continue
        try:
            values.append(float(f))
        except ValueError as e:
            raise BundleFormatError(f"seabed field {f!r} is neither a number nor '*'") from e
    return SeabedLine.from_optional(values)


def _read_ping_times(path: Path, cols: int) -> Optional[np.ndarray]:
    if not path.is_file():
        return None
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) != cols:
        raise BundleFormatError(f"ping_times has {len(lines)} lines, expected {cols}")
    try:
        return np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError:
        try:
            return np.array([float(ln) for ln in lines], dtype=np.float64)
        except ValueError as e:
            raise BundleFormatError(f"ping_times holds a non-numeric value: {e}") from e


def read_bundle(path: PathLike) -> GridBundle:
    src = Path(path)
    meta = _load_meta(src)
    try:
        rows = int(meta["rows"])
        cols = int(meta["cols"])
    except (TypeError, ValueError) as e:
        raise BundleFormatError(f"meta rows/cols must be integers: {e}") from e

    sv = _read_grid(src / "sv", rows, cols)
    along = _read_grid(src / "along", rows, cols)
    athwart = _read_grid(src / "athwart", rows, cols)
    for name, grid in (("along", along), ("athwart", athwart)):
        if np.any(grid != np.round(grid)):
            raise BundleFormatError(f"{name}: angle counts must be integers")

    ping_interval = meta.get("ping_interval_s")
    echogram = Echogram(
        sv=sv,
        range_step=float(meta["range_step_m"]),
        frequency=float(meta["frequency_khz"]),
        ping_times=_read_ping_times(src / "ping_times", cols),
        no_data=float(meta["no_data"]),
        ping_interval=None if ping_interval is None else float(ping_interval),
        sound_speed=float(meta["sound_speed_ms"] or 1500.0),
    )
    in_range = (
        (along >= ANGLE_MIN) & (along <= ANGLE_MAX) & (athwart >= ANGLE_MIN) & (athwart <= ANGLE_MAX)
    )
    angles = AngleChannels(
        along=np.where(in_range, along, 0).astype(np.int64),
        athwart=np.where(in_range, athwart, 0).astype(np.int64),
        valid=in_range,
    )
    bundle = GridBundle(echogram, angles, _read_seabed(src / "seabed", cols))
    LOG.debug("Bundle read | path=%s | shape=%sx%s", src, rows, cols)
    return bundle


def write_mask(path: PathLike, m: Mask) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_grid(out, m.bits.astype(np.int8))
    return out


def read_mask(path: PathLike, shape: Optional[Sequence[int]] = None) -> Mask:
    src = Path(path)
    if not src.is_file():
        raise BundleFormatError(f"missing mask file: {src}")
    if shape is None:
        text = src.read_text(encoding="utf-8").splitlines()
        rows = len(text)
        cols = len(text[0].split(",")) if rows and text[0].strip() else 0
    else:
        rows, cols = int(shape[0]), int(shape[1])
    grid = _read_grid(src, rows, cols)
    if not np.all((grid == 0) | (grid == 1)):
        raise BundleFormatError(f"{src.name}: mask cells must be 0 or 1")
    return Mask(grid.astype(bool))
