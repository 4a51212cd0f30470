"""Decay time, spectral centroid, centroid-difference curves and the
Helmholtz air resonance."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDecayError, StationMismatchError, UndefinedCentroidError

FIT_RANGE_DB = (-5.0, -35.0)
METRICS_HEADER = ("bridge", "key", "gamma", "t60_s", "centroid_hz", "status")
DIFFERENCE_HEADER = ("bridge", "key", "delta_centroid_hz")


def _samples_rate(ir, rate):
    if rate is None:
        return np.asarray(ir.samples, dtype=float), float(ir.rate)
    return np.asarray(ir, dtype=float), float(rate)


def energy_decay_curve(x):
    """Schroeder backward integral of x**2, in dB relative to the total."""
    e = np.cumsum((x**2)[::-1])[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(e / e[0])


def t60(ir, rate=None, fit_range=FIT_RANGE_DB):
    """Reverberation time from a linear fit to the Schroeder decay curve.

    Accepts an ImpulseResponse, or an array plus ``rate``. The fit spans
    ``fit_range`` dB and is extrapolated to -60 dB.

    Raises
    ------
    InsufficientDecayError
        If the curve never reaches the lower fit limit, or the tail of the
        signal still holds too much energy for the fit to be trusted.
    """
    x, fs = _samples_rate(ir, rate)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise InsufficientDecayError("impulse response is empty or non-finite")
    if x.size < 0.1 * fs:
        raise InsufficientDecayError(f"need at least 0.1 s of signal, got {x.size / fs:.3f} s")
    if not np.any(x):
        raise InsufficientDecayError("impulse response is identically zero")
    edc = energy_decay_curve(x)
    top, bottom = fit_range
    tail = edc[int(0.9 * x.size)]
    if not edc[-1] <= bottom or tail > bottom - 10.0:
        raise InsufficientDecayError(
            f"decay curve reaches only {tail:.1f} dB at 90% of the signal; "
            "signal too short or undamped"
        )
    idx = np.flatnonzero((edc <= top) & (edc >= bottom))
    t = idx / fs
    slope, _ = np.polyfit(t, edc[idx], 1)
    if not slope < 0:
        raise InsufficientDecayError("decay curve is not decreasing over the fit range")
    return -60.0 / slope


def spectral_centroid(ir, f_max=20_000.0, rate=None):
    """Magnitude-weighted mean frequency over 0 < f <= f_max.

    Uses the full unwindowed response zero-padded to the next power of two.
    """
    x, fs = _samples_rate(ir, rate)
    if f_max > fs / 2 * (1 + 1e-12):
        raise ValueError(f"f_max {f_max} Hz exceeds Nyquist {fs / 2} Hz")
    if x.size == 0 or not np.any(x):
        raise UndefinedCentroidError("centroid of an all-zero signal is undefined")
    n = 1 << max(0, int(x.size - 1).bit_length())
    mag = np.abs(np.fft.rfft(x, n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    band = (f > 0) & (f <= f_max)
    total = mag[band].sum()
    if not total > 0:
        raise UndefinedCentroidError("no spectral energy in the analysis band")
    return float((f[band] * mag[band]).sum() / total)


@dataclass(frozen=True)
class MetricsRow:
    station: str
    gamma: float
    t60: float
    centroid: float
    status: str = "ok"

    @property
    def bridge(self):
        return self.station.rsplit("_", 1)[0]

    @property
    def key(self):
        return int(self.station.rsplit("_", 1)[1])


def metrics_for(ir, f_max=20_000.0):
    """MetricsRow for one response; failed measurements keep their status."""
    if not ir.ok:
        return MetricsRow(str(ir.station), ir.gamma, math.nan, math.nan, ir.status)
    try:
        decay = t60(ir)
    except InsufficientDecayError:
        return MetricsRow(str(ir.station), ir.gamma, math.nan, spectral_centroid(ir, min(f_max, ir.rate / 2)),
                          "no_decay")
    return MetricsRow(str(ir.station), ir.gamma, decay, spectral_centroid(ir, min(f_max, ir.rate / 2)))


def _station_order(station):
    bridge, key = station.rsplit("_", 1)
    return (bridge, int(key))


def centroid_difference_curve(metrics_high_damping, metrics_low_damping):
    """Per-station SC(high damping) - SC(low damping), ordered by bridge then key.

    Stations failing in either case are dropped pairwise.
    """
    high = {m.station: m for m in metrics_high_damping}
    low = {m.station: m for m in metrics_low_damping}
    if high and low and not set(high) & set(low):
        raise StationMismatchError("damping cases share no stations")
    if set(high) != set(low):
        raise StationMismatchError(f"station sets differ: {sorted(set(high) ^ set(low))[:5]}")
    rows = []
    for s in sorted(high, key=_station_order):
        if high[s].status == "ok" and low[s].status == "ok":
            bridge, key = _station_order(s)
            rows.append((bridge, key, high[s].centroid - low[s].centroid))
    return rows


@dataclass(frozen=True)
class HelmholtzSpec:
    speed_of_sound: float = 343.0
    hole_radius: float = 0.035
    cavity_volume: float = 0.13
    neck_length: float = 0.004
    end_correction_factor: float = 1.7

    def __post_init__(self):
        for name in ("speed_of_sound", "hole_radius", "cavity_volume", "neck_length", "end_correction_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def effective_length(self):
        return self.neck_length + self.end_correction_factor * self.hole_radius

    @property
    def area(self):
        return math.pi * self.hole_radius**2

    def scaled(self, s):
        return HelmholtzSpec(self.speed_of_sound, self.hole_radius * s, self.cavity_volume * s**3,
                             self.neck_length * s, self.end_correction_factor)


def helmholtz_frequency(spec):
    return spec.speed_of_sound / (2 * math.pi) * math.sqrt(spec.area / (spec.cavity_volume * spec.effective_length))


def cavity_volume_for(frequency, speed_of_sound=343.0, hole_radius=0.035, neck_length=0.004,
                      end_correction_factor=1.7):
    """Invert the resonance formula for the cavity volume."""
    area = math.pi * hole_radius**2
    l_eff = neck_length + end_correction_factor * hole_radius
    return area / l_eff * (speed_of_sound / (2 * math.pi * frequency)) ** 2


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in sorted(rows, key=lambda r: (_station_order(r.station), r.gamma)):
            w.writerow([r.bridge, r.key, f"{r.gamma:.10f}", _fmt(r.t60), _fmt(r.centroid), r.status])


def write_difference_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIFFERENCE_HEADER)
        for bridge, key, d in curve:
            w.writerow([bridge, key, _fmt(d)])


def read_metrics_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append(MetricsRow(f"{r['bridge']}_{int(r['key']):02d}", float(r["gamma"]),
                                   float(r["t60_s"]), float(r["centroid_hz"]), r["status"]))
    return rows


def _fmt(x):
    return "nan" if not math.isfinite(x) else f"{x:.6f}"
