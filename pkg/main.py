# main.py
"""
Command-line entry point.

    python main.py ingest survey.raw bundle/ --frequency 38
    python main.py detect bundle/ --out-mask mask.csv --report report.json
    python main.py clean bundle/ mask.csv cleaned/
    python main.py predict --alias-range 500 --ping-interval 2 --logging-range 1000 --freq 38 --freq 70
    python main.py render bundle/ echogram.png --mask mask.csv --scale 2

Exit status: 0 success, 1 internal failure, 2 bad input or parameters.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from alias_geometry import (
    AliasGeometry,
    aliased_range,
    candidate_true_depths,
    plausibility_verdicts,
)
from detect import detect_aliased_seabed
from detect_config import load_config
from echogram import (
    AngleChannels,
    GridBundle,
    apply_mask,
    dump_json_atomic,
    mask_stats,
    read_bundle,
    read_mask,
    write_bundle,
    write_mask,
)
from ek60_raw import ingest_raw
from errors import AliasSeabedError, ParameterError
from render import RenderOptions, render_echogram, write_png


VERSION = "0.3.0"

LOG = logging.getLogger("main")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2


@dataclass(frozen=True)
class RunReport:
    inputs: Dict[str, Optional[str]]
    config: Dict[str, Any]
    t_used: Optional[float]
    mask_cells: int
    mask_fraction: float
    angle_cells: int
    duration_s: float
    version: str
    shape: List[int]

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _setup_logging(log_level: str) -> None:
    level = getattr(logging, (log_level or "INFO").upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=[logging.StreamHandler()],
    )


def _say(args: argparse.Namespace, text: str) -> None:
    if not args.quiet:
        print(text)


def _parse_cal(items: Optional[Sequence[str]]) -> Dict[str, float]:
    out: Dict[str, float] = {}
    for item in items or []:
        if "=" not in item:
            raise ParameterError(f"--cal expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError as e:
            raise ParameterError(f"--cal {k.strip()}: {v!r} is not a number") from e
    return out


# ===============================
# Subcommands
# ===============================

def cmd_ingest(args: argparse.Namespace) -> int:
    result = ingest_raw(
        args.raw,
        channel=args.channel,
        frequency=args.frequency,
        overrides=_parse_cal(args.cal),
        swap_angle_bytes=args.swap_angle_bytes,
    )
    write_bundle(args.out, result.bundle)
    rows, cols = result.bundle.echogram.shape
    counts = ", ".join(f"{tag}={n}" for tag, n in sorted(result.counts.items()))
    _say(args, f"✅ 导入完成: channel {result.channel}, {cols} pings x {rows} samples -> {args.out}")
    _say(args, f"📦 datagrams: {counts} (skipped {result.skipped})")
    return EXIT_OK


def _geometry_for(args: argparse.Namespace, bundle: GridBundle) -> Optional[AliasGeometry]:
    e = bundle.echogram
    ping_interval = args.ping_interval if args.ping_interval is not None else e.ping_interval
    if ping_interval is None:
        raise ParameterError("geometry filter needs a ping interval (--ping-interval or bundle meta)")
    logging_range = args.logging_range if args.logging_range is not None else e.rows * e.range_step
    return AliasGeometry(
        ping_interval=ping_interval,
        logging_range=logging_range,
        sound_speed=args.sound_speed if args.sound_speed is not None else e.sound_speed,
    )


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = load_config(
        args.config,
        window_along=args.window_along,
        window_athwart=args.window_athwart,
        t_theta=args.t_theta,
        t_phi=args.t_phi,
        t_min=args.t_min,
        connectivity=args.connectivity,
        fill_holes=args.fill_holes,
        rank=args.rank,
        r_min=args.r_min,
        r_max=args.r_max,
        workers=args.workers,
        geometry_filter=args.geometry_filter,
    )
    if args.no_t_min:
        cfg = dataclasses.replace(cfg, t_min=None)

    bundle = read_bundle(args.bundle)
    e = bundle.echogram
    seabed = None if args.ignore_seabed else bundle.seabed
    geometry = _geometry_for(args, bundle) if cfg.geometry_filter else None

    t0 = time.perf_counter()
    result = detect_aliased_seabed(e, bundle.angles, seabed, cfg, geometry)
    duration = time.perf_counter() - t0

    write_mask(args.out_mask, result.mask)
    cells, fraction = mask_stats(result.mask)
    report = RunReport(
        inputs={
            "bundle": str(args.bundle),
            "config": None if not args.config else str(args.config),
            "mask": str(args.out_mask),
        },
        config=cfg.to_dict(),
        t_used=result.t_used,
        mask_cells=cells,
        mask_fraction=fraction,
        angle_cells=int(np.count_nonzero(result.m_angle.bits)),
        duration_s=max(0.0, duration),
        version=VERSION,
        shape=[e.rows, e.cols],
    )
    dump_json_atomic(Path(args.report), report.to_dict())
    LOG.info("Detect OK | t_used=%s | cells=%s | duration=%.3fs", result.t_used, cells, duration)

    if cells:
        _say(args, f"✅ 检测完成: {cells} cells ({fraction:.2%}), T = {result.t_used:.2f} dB, {duration:.2f}s")
    else:
        _say(args, f"⚠️ 检测完成: 未发现混叠海底 (empty mask), {duration:.2f}s")
    return EXIT_OK


def cmd_clean(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.bundle)
    e = bundle.echogram
    token = load_config(args.config, token=args.token).token
    mask = read_mask(args.mask, e.shape)
    cleaned = apply_mask(e, mask, token)

    angles = bundle.angles
    if float(token) == e.no_data:
        angles = AngleChannels(angles.along, angles.athwart, angles.valid & ~mask.bits)
    write_bundle(args.out, GridBundle(cleaned, angles, bundle.seabed))
    cells, _ = mask_stats(mask)
    _say(args, f"✅ 清理完成: {cells} cells set to {token:g} -> {args.out}")
    return EXIT_OK


def _fmt_m(value: float) -> str:
    return f"{value:g} m"


def cmd_predict(args: argparse.Namespace) -> int:
    g = AliasGeometry(
        ping_interval=args.ping_interval,
        logging_range=args.logging_range,
        sound_speed=args.sound_speed if args.sound_speed is not None else 1500.0,
    )
    freqs = args.freq
    if args.alias_range is not None:
        observed = freqs[0]
        depths = candidate_true_depths(args.alias_range, g, observed)
        if not depths:
            print(f"alias range {_fmt_m(args.alias_range)} at {observed:g} kHz: no candidate seabed depth")
            return EXIT_OK
        print(
            f"alias range {_fmt_m(args.alias_range)} at {observed:g} kHz -> candidate seabed depths: "
            + ", ".join(_fmt_m(d) for d in depths)
        )
    else:
        r_a = aliased_range(args.seabed_depth, g)
        print(f"seabed depth {_fmt_m(args.seabed_depth)} -> alias range {_fmt_m(r_a)}")
        depths = [args.seabed_depth]

    for r_s in depths:
        verdicts = plausibility_verdicts(r_s, freqs, g)
        line = ", ".join(f"{f:g} kHz {v}" for f, v in verdicts.items())
        print(f"  {_fmt_m(r_s)}: {line}")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.bundle)
    e = bundle.echogram
    mask = read_mask(args.mask, e.shape) if args.mask else None
    options = RenderOptions(
        sv_min=args.sv_min,
        sv_max=args.sv_max,
        colormap=args.colormap,
        scale=args.scale,
    )
    write_png(render_echogram(e, mask, options), args.out)
    _say(args, f"✅ 图像已保存: {args.out}")
    return EXIT_OK


# ===============================
# Parser
# ===============================

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description="Aliased-seabed detection for split-beam echo sounder data")
    ap.add_argument("--config", default=None, help="Flat key = value detection config file")
    ap.add_argument("--quiet", action="store_true", help="Only warnings and errors")
    ap.add_argument("--log-level", default="INFO", help="DEBUG|INFO|WARNING|ERROR")
    ap.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="EK60 RAW file -> grid bundle")
    p.add_argument("raw")
    p.add_argument("out")
    pick = p.add_mutually_exclusive_group()
    pick.add_argument("--channel", type=int, default=None, help="1-based channel ordinal")
    pick.add_argument("--frequency", type=float, default=None, help="Channel nominal frequency (kHz)")
    p.add_argument("--cal", action="append", default=[], metavar="KEY=VALUE", help="Calibration override")
    p.add_argument("--swap-angle-bytes", action="store_true", help="High byte athwart, low byte along")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("detect", help="Detect aliased seabed in a grid bundle")
    p.add_argument("bundle")
    p.add_argument("--out-mask", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--window-along", type=int, default=None)
    p.add_argument("--window-athwart", type=int, default=None)
    p.add_argument("--t-theta", type=float, default=None, help="Along-ship threshold (counts^2)")
    p.add_argument("--t-phi", type=float, default=None, help="Athwart-ship threshold (counts^2)")
    floor = p.add_mutually_exclusive_group()
    floor.add_argument("--t-min", type=float, default=None, help="Sv floor for T (dB)")
    floor.add_argument("--no-t-min", action="store_true", help="Disable the Sv floor")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=None)
    p.add_argument("--fill-holes", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--rank", type=float, default=None, help="Percentile for T (50 = median)")
    p.add_argument("--r-min", type=float, default=None, help="Search range start (m)")
    p.add_argument("--r-max", type=float, default=None, help="Search range end (m)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--ignore-seabed", action="store_true", help="Do not clear pings with a detected seabed")
    p.add_argument("--geometry-filter", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--ping-interval", type=float, default=None, help="s, default from bundle meta")
    p.add_argument("--logging-range", type=float, default=None, help="m, default rows x range step")
    p.add_argument("--sound-speed", type=float, default=None, help="m/s, default from bundle meta")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("clean", help="Replace masked Sv cells with a token")
    p.add_argument("bundle")
    p.add_argument("mask")
    p.add_argument("out")
    p.add_argument("--token", type=float, default=None, help="Replacement Sv value (default -999)")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("predict", help="Alias range <-> true seabed depth")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--alias-range", type=float, default=None, help="Observed alias range (m)")
    which.add_argument("--seabed-depth", type=float, default=None, help="True seabed depth (m)")
    p.add_argument("--ping-interval", type=float, required=True, help="s")
    p.add_argument("--sound-speed", type=float, default=None, help="m/s (default 1500)")
    p.add_argument("--logging-range", type=float, required=True, help="m")
    p.add_argument("--freq", type=float, action="append", required=True, help="kHz; first one is the observing channel")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("render", help="Echogram (+ mask) -> PNG")
    p.add_argument("bundle")
    p.add_argument("out")
    p.add_argument("--mask", default=None)
    p.add_argument("--sv-min", type=float, default=-90.0)
    p.add_argument("--sv-max", type=float, default=-30.0)
    p.add_argument("--colormap", default="viridis")
    p.add_argument("--scale", type=int, default=1)
    p.set_defaults(func=cmd_render)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging("WARNING" if args.quiet else args.log_level)
    try:
        return args.func(args)
    except (AliasSeabedError, OSError, ValueError, KeyError) as e:
        LOG.debug("Input error", exc_info=True)
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        LOG.exception("Internal failure in %s", args.command)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
