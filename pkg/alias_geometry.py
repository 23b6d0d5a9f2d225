# alias_geometry.py
"""
Alias-range arithmetic for seabed echoes that arrive one or more pings late.

A seabed at range R_S beyond the logging range R_L shows up in a later ping at

    R_A = mod(2 R_S, c I_T) / 2,     valid for R_L < R_S < R_max(f)

where c is the sound speed and I_T the ping interval. R_max(f) is the deepest
seabed an echo sounder can detect at frequency f with typical settings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping

from errors import AliasDomainError, ParameterError, UnknownFrequencyError


# EK60 reference-manual detection limits, typical transducer settings (kHz -> m).
DEFAULT_MAX_RANGE: Dict[float, float] = {
    18.0: 7000.0,
    38.0: 2800.0,
    70.0: 1100.0,
    120.0: 850.0,
    200.0: 550.0,
}

DEFAULT_SOUND_SPEED = 1500.0

CONSISTENT = "consistent"
REFUTING = "refuting"


@dataclass(frozen=True)
class AliasGeometry:
    ping_interval: float
    logging_range: float
    sound_speed: float = DEFAULT_SOUND_SPEED
    max_range_table: Mapping[float, float] = field(default_factory=lambda: dict(DEFAULT_MAX_RANGE))

    def __post_init__(self):
        if not (self.sound_speed > 0):
            raise ParameterError(f"sound_speed must be > 0, got {self.sound_speed!r}")
        if not (self.ping_interval > 0):
            raise ParameterError(f"ping_interval must be > 0, got {self.ping_interval!r}")
        if not (self.logging_range > 0):
            raise ParameterError(f"logging_range must be > 0, got {self.logging_range!r}")
        table = {float(k): float(v) for k, v in dict(self.max_range_table).items()}
        bad = [k for k, v in table.items() if not v > 0]
        if bad:
            raise ParameterError(f"max range must be > 0 for frequencies {bad}")
        object.__setattr__(self, "max_range_table", table)


def alias_period(g: AliasGeometry) -> float:
    """Range travelled by sound in half a ping interval, c I_T / 2."""
    return g.sound_speed * g.ping_interval / 2.0


def max_range(frequency: float, g: AliasGeometry) -> float:
    try:
        return g.max_range_table[float(frequency)]
    except KeyError:
        known = ", ".join(f"{k:g}" for k in sorted(g.max_range_table))
        raise UnknownFrequencyError(f"no maximum detection range for {frequency:g} kHz (known: {known})") from None


def aliased_range(r_s: float, g: AliasGeometry) -> float:
    if not r_s > g.logging_range:
        raise AliasDomainError(
            f"seabed at {r_s:g} m is within the logging range {g.logging_range:g} m; "
            "aliasing needs R_L < R_S < R_max"
        )
    # Python's float % with a positive modulus is already the non-negative remainder.
    return ((2.0 * r_s) % (g.sound_speed * g.ping_interval)) / 2.0


def candidate_true_depths(r_a: float, g: AliasGeometry, frequency: float) -> List[float]:
    """All seabed depths R_L < R_S < R_max(f) that alias to r_a, ascending."""
    period = alias_period(g)
    if not (0.0 <= r_a < period):
        raise AliasDomainError(f"alias range {r_a:g} m outside [0, {period:g}) for c*I_T/2")
    r_max = max_range(frequency, g)

    out: List[float] = []
    k = 0
    while True:
        r_s = r_a + k * period
        if r_s >= r_max:
            break
        if r_s > g.logging_range:
            out.append(r_s)
        k += 1
    return out


def cross_frequency_plausible(r_s: float, frequency: float, g: AliasGeometry) -> bool:
    """False means a signal at this frequency cannot be an alias of a seabed at r_s."""
    return r_s < max_range(frequency, g)


def plausibility_verdicts(r_s: float, frequencies: Iterable[float], g: AliasGeometry) -> Dict[float, str]:
    return {
        float(f): (CONSISTENT if cross_frequency_plausible(r_s, f, g) else REFUTING)
        for f in frequencies
    }
