# ek60_raw.py
"""
Reader/writer for the subset of the Simrad EK60 RAW format the detector needs.

Stream framing (little-endian throughout):

    uint32 length L | 4-byte tag | uint64 filetime | L-12 body bytes | uint32 length L

filetime counts 100 ns ticks since 1601-01-01. Only CON0 (configuration) and
RAW0 (sample data) datagrams are interpreted; every other tag is counted and
skipped.

RAW0 body: 72-byte fixed header, then `count` int16 power words when mode bit
0 is set, then `count` angle pairs when mode bit 1 is set. Each angle pair is
two signed bytes: low byte athwart-ship, high byte along-ship.
"""

from __future__ import annotations

import datetime as dt
import io
import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from echogram import NO_DATA, AngleChannels, Echogram, GridBundle
from errors import (
    DatagramTypeError,
    EmptyInputError,
    ParameterError,
    RawCorruptionError,
    RawFormatError,
    RawTruncationError,
)


LOG = logging.getLogger("ek60_raw")

_LEN = struct.Struct("<I")
_DG_HEAD = struct.Struct("<4sQ")
_RAW0_HEAD = struct.Struct("<2h12f2h2f2l")
_CON0_HEAD = struct.Struct("<128s128s128s30s98sl")
_CON0_XCVR = struct.Struct("<128sl9f6f5f8s5f8s5f8s16s28s")

MODE_POWER = 0x01
MODE_ANGLE = 0x02

# raw power word -> dB
POWER_SCALE_DB = 10.0 * math.log10(2.0) / 256.0

_FILETIME_EPOCH = dt.datetime(1601, 1, 1, tzinfo=dt.timezone.utc)

StreamLike = Union[bytes, bytearray, BinaryIO]


@dataclass(frozen=True)
class Datagram:
    type_tag: str
    timestamp: int
    payload: bytes
    offset: int = 0


@dataclass(frozen=True)
class Raw0Header:
    channel: int
    mode: int
    transducer_depth: float
    frequency: float  # Hz
    transmit_power: float
    pulse_length: float
    bandwidth: float
    sample_interval: float
    sound_velocity: float
    absorption: float
    offset: int
    count: int


@dataclass(frozen=True)
class PingRecord:
    channel: int
    timestamp: int
    power: Optional[np.ndarray]
    along: Optional[np.ndarray]
    athwart: Optional[np.ndarray]
    header: Optional[Raw0Header] = field(default=None, compare=False)

    def __post_init__(self):
        lengths = {len(a) for a in (self.power, self.along, self.athwart) if a is not None}
        if len(lengths) > 1:
            raise ParameterError(f"power/angle sequences differ in length: {sorted(lengths)}")
        if (self.along is None) != (self.athwart is None):
            raise ParameterError("along and athwart counts must both be present or both absent")

    @property
    def sample_count(self) -> int:
        for a in (self.power, self.along, self.athwart):
            if a is not None:
                return len(a)
        return 0

    @property
    def has_angles(self) -> bool:
        return self.along is not None


@dataclass(frozen=True)
class TransceiverConfig:
    channel_id: str
    frequency: float  # Hz
    gain: float
    equivalent_beam_angle: float
    pulse_length_table: Tuple[float, ...]
    gain_table: Tuple[float, ...]
    sa_correction_table: Tuple[float, ...]


@dataclass(frozen=True)
class CalibrationParams:
    transmit_power: float  # W
    gain: float  # dB
    equivalent_beam_angle: float  # dB re 1 sr
    pulse_duration: float  # s
    absorption: float  # dB/m
    sound_speed: float  # m/s
    sa_correction: float  # dB
    frequency: float  # kHz
    sample_interval: float  # s

    def __post_init__(self):
        for name in ("transmit_power", "pulse_duration", "absorption", "sound_speed", "frequency", "sample_interval"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(f"calibration {name} must be > 0, got {value!r}")
        for name in ("gain", "equivalent_beam_angle", "sa_correction"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"calibration {name} must be finite")

    @property
    def range_step(self) -> float:
        return self.sound_speed * self.sample_interval / 2.0

    @property
    def wavelength(self) -> float:
        return self.sound_speed / (self.frequency * 1000.0)


@dataclass(frozen=True)
class IngestResult:
    bundle: GridBundle
    counts: Dict[str, int]
    skipped: int
    channel: int
    calibration: CalibrationParams


def filetime_to_datetime(filetime: int) -> dt.datetime:
    return _FILETIME_EPOCH + dt.timedelta(microseconds=filetime // 10)


# ===============================
# Framing
# ===============================

def _as_stream(source: StreamLike) -> BinaryIO:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(source))
    return source


def iter_datagrams(source: StreamLike) -> Iterator[Datagram]:
    stream = _as_stream(source)
    offset = 0
    while True:
        head = stream.read(4)
        if not head:
            return
        if len(head) < 4:
            raise RawTruncationError(f"stream ends inside a length field ({len(head)} of 4 bytes)", offset)
        (length,) = _LEN.unpack(head)
        if length < _DG_HEAD.size:
            raise RawCorruptionError(f"datagram length {length} shorter than the 12-byte tag+time header", offset)
        payload = stream.read(length)
        if len(payload) < length:
            raise RawTruncationError(f"datagram declares {length} bytes, only {len(payload)} remain", offset)
        tail_offset = offset + 4 + length
        tail = stream.read(4)
        if len(tail) < 4:
            raise RawTruncationError("stream ends before the trailing length field", tail_offset)
        (trailer,) = _LEN.unpack(tail)
        if trailer != length:
            raise RawCorruptionError(f"trailing length {trailer} != leading length {length}", tail_offset)
        tag_bytes, filetime = _DG_HEAD.unpack_from(payload, 0)
        tag = tag_bytes.decode("ascii", errors="replace")
        yield Datagram(tag, filetime, payload[_DG_HEAD.size:], offset)
        offset = tail_offset + 4


def read_datagrams(source: StreamLike) -> List[Datagram]:
    return list(iter_datagrams(source))


def pack_datagram(tag: str, filetime: int, body: bytes = b"") -> bytes:
    tag_bytes = tag.encode("ascii")
    if len(tag_bytes) != 4:
        raise ParameterError(f"datagram tag must be 4 ASCII characters, got {tag!r}")
    payload = _DG_HEAD.pack(tag_bytes, int(filetime)) + bytes(body)
    length = _LEN.pack(len(payload))
    return length + payload + length


# ===============================
# RAW0 / CON0 decoding
# ===============================

def parse_raw0(d: Datagram, swap_angle_bytes: bool = False) -> PingRecord:
    if d.type_tag != "RAW0":
        raise DatagramTypeError(f"expected a RAW0 datagram, got {d.type_tag!r}", d.offset)
    body = d.payload
    if len(body) < _RAW0_HEAD.size:
        raise RawCorruptionError(f"RAW0 body of {len(body)} bytes is shorter than its {_RAW0_HEAD.size}-byte header", d.offset)
    v = _RAW0_HEAD.unpack_from(body, 0)
    header = Raw0Header(
        channel=v[0],
        mode=v[1],
        transducer_depth=v[2],
        frequency=v[3],
        transmit_power=v[4],
        pulse_length=v[5],
        bandwidth=v[6],
        sample_interval=v[7],
        sound_velocity=v[8],
        absorption=v[9],
        # v[10:14] heave/roll/pitch/temperature, v[14:18] trawl fields
        offset=v[18],
        count=v[19],
    )
    count = header.count
    if count < 0:
        raise RawCorruptionError(f"RAW0 sample count {count} is negative", d.offset)
    has_power = bool(header.mode & MODE_POWER)
    has_angle = bool(header.mode & MODE_ANGLE)
    expected = _RAW0_HEAD.size + count * 2 * (int(has_power) + int(has_angle))
    if len(body) != expected:
        raise RawCorruptionError(
            f"RAW0 body is {len(body)} bytes, mode {header.mode} with {count} samples needs {expected}",
            d.offset,
        )

    pos = _RAW0_HEAD.size
    power = along = athwart = None
    if has_power:
        power = np.frombuffer(body, dtype="<i2", count=count, offset=pos).astype(np.int16)
        pos += 2 * count
    if has_angle:
        pairs = np.frombuffer(body, dtype=np.int8, count=2 * count, offset=pos).reshape(count, 2)
        lo, hi = pairs[:, 0].copy(), pairs[:, 1].copy()
        athwart, along = (hi, lo) if swap_angle_bytes else (lo, hi)
    return PingRecord(header.channel, d.timestamp, power, along, athwart, header)


def parse_con0(d: Datagram) -> List[TransceiverConfig]:
    if d.type_tag != "CON0":
        raise DatagramTypeError(f"expected a CON0 datagram, got {d.type_tag!r}", d.offset)
    body = d.payload
    if len(body) < _CON0_HEAD.size:
        raise RawCorruptionError("CON0 body shorter than its header", d.offset)
    n = _CON0_HEAD.unpack_from(body, 0)[-1]
    if n < 0 or len(body) < _CON0_HEAD.size + n * _CON0_XCVR.size:
        raise RawCorruptionError(f"CON0 declares {n} transceivers but the body is {len(body)} bytes", d.offset)
    out = []
    for i in range(n):
        v = _CON0_XCVR.unpack_from(body, _CON0_HEAD.size + i * _CON0_XCVR.size)
        out.append(
            TransceiverConfig(
                channel_id=v[0].split(b"\x00", 1)[0].decode("ascii", errors="replace").strip(),
                frequency=v[2],
                gain=v[3],
                equivalent_beam_angle=v[4],
                pulse_length_table=tuple(v[17:22]),
                gain_table=tuple(v[23:28]),
                sa_correction_table=tuple(v[29:34]),
            )
        )
    return out


# ===============================
# Sv conversion
# ===============================

def power_to_sv(
    p: PingRecord,
    c: CalibrationParams,
    no_data: float = NO_DATA,
) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    """Return (Sv column, along column, athwart column) for one ping."""
    if p.power is None:
        raise ParameterError(f"ping at filetime {p.timestamp} carries no power samples")
    power_db = p.power.astype(np.float64) * POWER_SCALE_DB
    r = np.arange(len(power_db), dtype=np.float64) * c.range_step

    gain_lin = 10.0 ** (c.gain / 10.0)
    psi_lin = 10.0 ** (c.equivalent_beam_angle / 10.0)
    constant = 10.0 * math.log10(
        c.transmit_power * gain_lin ** 2 * c.wavelength ** 2 * c.sound_speed * c.pulse_duration * psi_lin
        / (32.0 * math.pi ** 2)
    )
    with np.errstate(divide="ignore"):
        spreading = 20.0 * np.log10(r)
    sv = power_db + spreading + 2.0 * c.absorption * r - constant - 2.0 * c.sa_correction
    if sv.size:
        sv[0] = no_data  # r = 0
    return sv, p.along, p.athwart


def _table_pick(table: Sequence[float], pulse_table: Sequence[float], pulse: float) -> Optional[float]:
    for pl, value in zip(pulse_table, table):
        if pl > 0 and math.isclose(pl, pulse, rel_tol=1e-4):
            return float(value)
    return None


def calibration_from(
    header: Raw0Header,
    xcvr: Optional[TransceiverConfig],
    overrides: Optional[Mapping[str, float]] = None,
) -> CalibrationParams:
    if xcvr is None:
        LOG.warning("No CON0 configuration for channel %s; gain, beam angle and sa default to 0 dB", header.channel)
        gain, psi, sa = 0.0, 0.0, 0.0
    else:
        picked_gain = _table_pick(xcvr.gain_table, xcvr.pulse_length_table, header.pulse_length)
        gain = picked_gain if picked_gain else float(xcvr.gain)
        psi = float(xcvr.equivalent_beam_angle)
        sa = _table_pick(xcvr.sa_correction_table, xcvr.pulse_length_table, header.pulse_length) or 0.0
    values = dict(
        transmit_power=float(header.transmit_power),
        gain=gain,
        equivalent_beam_angle=psi,
        pulse_duration=float(header.pulse_length),
        absorption=float(header.absorption),
        sound_speed=float(header.sound_velocity),
        sa_correction=sa,
        frequency=float(header.frequency) / 1000.0,
        sample_interval=float(header.sample_interval),
    )
    if overrides:
        unknown = set(overrides) - set(values)
        if unknown:
            raise ParameterError(f"unknown calibration field(s): {', '.join(sorted(unknown))}")
        values.update({k: float(v) for k, v in overrides.items()})
    return CalibrationParams(**values)


# ===============================
# File level
# ===============================

def _open_source(source) -> Tuple[BinaryIO, bool]:
    if isinstance(source, (str, Path)):
        return open(source, "rb"), True
    return _as_stream(source), False


def _select_channel(
    by_channel: Dict[int, List[PingRecord]],
    channel: Optional[int],
    frequency: Optional[float],
) -> int:
    if channel is not None:
        if channel not in by_channel:
            raise EmptyInputError(f"no RAW0 datagrams for channel {channel} (present: {sorted(by_channel)})")
        return channel
    if frequency is not None:
        hits = [
            ch for ch, pings in by_channel.items()
            if pings[0].header is not None and abs(pings[0].header.frequency / 1000.0 - frequency) < 0.5
        ]
        if not hits:
            raise EmptyInputError(f"no RAW0 datagrams at {frequency:g} kHz")
        return min(hits)
    if not by_channel:
        raise EmptyInputError("file holds no RAW0 datagrams")
    if len(by_channel) > 1:
        raise ParameterError(f"file holds channels {sorted(by_channel)}; select one by ordinal or frequency")
    return next(iter(by_channel))


def ingest_raw(
    source,
    channel: Optional[int] = None,
    frequency: Optional[float] = None,
    overrides: Optional[Mapping[str, float]] = None,
    swap_angle_bytes: bool = False,
    no_data: float = NO_DATA,
) -> IngestResult:
    stream, owned = _open_source(source)
    counts: Counter = Counter()
    configs: List[TransceiverConfig] = []
    by_channel: Dict[int, List[PingRecord]] = {}
    try:
        for d in iter_datagrams(stream):
            counts[d.type_tag] += 1
            if d.type_tag == "CON0":
                configs = parse_con0(d)
            elif d.type_tag == "RAW0":
                rec = parse_raw0(d, swap_angle_bytes=swap_angle_bytes)
                by_channel.setdefault(rec.channel, []).append(rec)
    finally:
        if owned:
            stream.close()

    skipped = sum(n for tag, n in counts.items() if tag not in ("CON0", "RAW0"))
    if not by_channel:
        raise EmptyInputError("file holds no RAW0 datagrams")
    selected = _select_channel(by_channel, channel, frequency)
    pings = by_channel[selected]
    for p in pings:
        if not p.has_angles:
            raise RawFormatError(f"ping at filetime {p.timestamp} on channel {selected} has no split-beam angle data")

    xcvr = configs[selected - 1] if 0 < selected <= len(configs) else None
    calib = calibration_from(pings[0].header, xcvr, overrides)

    rows = max(p.sample_count for p in pings)
    cols = len(pings)
    sv = np.full((rows, cols), no_data, dtype=np.float64)
    along = np.zeros((rows, cols), dtype=np.int64)
    athwart = np.zeros((rows, cols), dtype=np.int64)
    valid = np.zeros((rows, cols), dtype=bool)
    for j, p in enumerate(pings):
        col_sv, col_along, col_athwart = power_to_sv(p, calib, no_data)
        n = len(col_sv)
        # 短 ping 底部补 no_data
        sv[:n, j] = col_sv
        along[:n, j] = col_along
        athwart[:n, j] = col_athwart
        valid[:n, j] = True

    times = np.array([p.timestamp for p in pings], dtype=np.int64)
    ping_interval = None
    if cols > 1:
        step = float(np.median(np.diff(times))) / 1e7
        ping_interval = step if step > 0 else None

    echogram = Echogram(
        sv=sv,
        range_step=calib.range_step,
        frequency=calib.frequency,
        ping_times=times,
        no_data=no_data,
        ping_interval=ping_interval,
        sound_speed=calib.sound_speed,
    )
    bundle = GridBundle(echogram, AngleChannels(along, athwart, valid))
    LOG.info(
        "Ingest OK | channel=%s | pings=%s | samples=%s | skipped=%s | first=%s",
        selected,
        cols,
        rows,
        skipped,
        filetime_to_datetime(int(times[0])).isoformat(),
    )
    return IngestResult(bundle, dict(counts), skipped, selected, calib)


def _con0_body(calib: CalibrationParams, channels: Sequence[int]) -> bytes:
    parts = [_CON0_HEAD.pack(b"survey", b"transect", b"ER60", b"2.4.3", b"", len(channels))]
    for ch in channels:
        pulse_table = [calib.pulse_duration, 0.0, 0.0, 0.0, 0.0]
        gain_table = [calib.gain, 0.0, 0.0, 0.0, 0.0]
        sa_table = [calib.sa_correction, 0.0, 0.0, 0.0, 0.0]
        parts.append(
            _CON0_XCVR.pack(
                f"GPT {calib.frequency:g} kHz channel {ch}".encode("ascii"),
                1,  # split-beam
                calib.frequency * 1000.0,
                calib.gain,
                calib.equivalent_beam_angle,
                7.0, 7.0, 23.0, 23.0, 0.0, 0.0,
                0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                *pulse_table, b"",
                *gain_table, b"",
                *sa_table, b"",
                b"070413", b"",
            )
        )
    return b"".join(parts)


def _raw0_body(p: PingRecord, calib: CalibrationParams) -> bytes:
    count = p.sample_count
    mode = (MODE_POWER if p.power is not None else 0) | (MODE_ANGLE if p.has_angles else 0)
    head = _RAW0_HEAD.pack(
        int(p.channel), mode,
        0.0, calib.frequency * 1000.0, calib.transmit_power, calib.pulse_duration,
        2425.0, calib.sample_interval, calib.sound_speed, calib.absorption,
        0.0, 0.0, 0.0, 10.0,
        0, 0, 0.0, 0.0,
        0, count,
    )
    parts = [head]
    if p.power is not None:
        power = np.asarray(p.power)
        if power.size and (power.min() < -32768 or power.max() > 32767):
            raise ParameterError(f"power words outside int16 at filetime {p.timestamp}")
        parts.append(power.astype("<i2").tobytes())
    if p.has_angles:
        along = np.asarray(p.along, dtype=np.int64)
        athwart = np.asarray(p.athwart, dtype=np.int64)
        for name, arr in (("along", along), ("athwart", athwart)):
            if arr.size and (arr.min() < -128 or arr.max() > 127):
                raise ParameterError(f"{name} counts outside [-128, 127] at filetime {p.timestamp}")
        pairs = np.empty((count, 2), dtype=np.int8)
        pairs[:, 0] = athwart
        pairs[:, 1] = along
        parts.append(pairs.tobytes())
    return b"".join(parts)


def write_raw(
    pings: Iterable[PingRecord],
    calib: CalibrationParams,
    extra: Iterable[Tuple[str, int, bytes]] = (),
) -> bytes:
    """
    Encode pings as CON0 + RAW0 datagrams. `extra` (tag, filetime, body)
    datagrams are appended after the configuration, e.g. NME0 fixtures.
    """
    pings = list(pings)
    channels = sorted({int(p.channel) for p in pings}) or [1]
    first_time = min((int(p.timestamp) for p in pings), default=0)
    out = [pack_datagram("CON0", first_time, _con0_body(calib, list(range(1, max(channels) + 1))))]
    for tag, filetime, body in extra:
        out.append(pack_datagram(tag, filetime, body))
    for p in pings:
        out.append(pack_datagram("RAW0", int(p.timestamp), _raw0_body(p, calib)))
    return b"".join(out)
