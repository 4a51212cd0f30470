"""Impulse-response simulation, damping calibration and batch runs."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import butter, sosfiltfilt

from ..errors import CalibrationError, DivergenceError, InsufficientDecayError
from ..materials import SPRUCE, MaterialSpec, TimeSpec
from .system import PlateSystem

log = logging.getLogger(__name__)

EXCITATION_KINDS = ("raised_cosine", "velocity_impulse")
PROBE_QUANTITIES = ("displacement", "velocity")


@dataclass(frozen=True)
class Excitation:
    """Drive at a station id, or at a plate node ``(j, i)`` for test plates.

    ``amplitude`` is a peak force in N for ``raised_cosine`` and an initial
    velocity in m/s for ``velocity_impulse``. ``width=None`` means 10 dt.
    """

    station: object
    kind: str = "raised_cosine"
    amplitude: float = 1.0
    width: float | None = None

    def __post_init__(self):
        if self.kind not in EXCITATION_KINDS:
            raise ValueError(f"excitation kind must be one of {EXCITATION_KINDS}")

    def pulse_width(self, dt):
        width = 10 * dt if self.width is None else self.width
        if self.kind == "raised_cosine" and width < 2 * dt * (1 - 1e-9):
            raise ValueError(f"raised-cosine width {width:.3g}s is shorter than 2 dt")
        return width


@dataclass(frozen=True, eq=False)
class SimConfig:
    layout: object
    thickness: object
    excitation: Excitation
    probes: tuple = ()
    soundboard_material: MaterialSpec = SPRUCE
    bar_material: MaterialSpec | None = None
    time: TimeSpec = TimeSpec()
    output_rate: float = 96_000.0
    boundary: str = "clamped"
    probe_quantity: str = "displacement"

    def __post_init__(self):
        if not self.probes:
            object.__setattr__(self, "probes", (self.excitation.station,))
        object.__setattr__(self, "probes", tuple(self.probes))
        if self.probe_quantity not in PROBE_QUANTITIES:
            raise ValueError(f"probe_quantity must be one of {PROBE_QUANTITIES}")
        self.decimation  # validates the rate ratio

    @property
    def gamma(self):
        return self.soundboard_material.decrement

    @property
    def decimation(self):
        ratio = self.time.sample_rate / self.output_rate
        q = int(round(ratio))
        if q < 1 or abs(ratio - q) > 1e-6 * ratio:
            raise ValueError(
                f"output_rate {self.output_rate} Hz must divide the sample rate {self.time.sample_rate} Hz"
            )
        return q

    def with_gamma(self, gamma):
        return replace(self, soundboard_material=self.soundboard_material.with_decrement(gamma))

    def for_station(self, station_id):
        return replace(self, excitation=replace(self.excitation, station=station_id), probes=(station_id,))


@dataclass(eq=False)
class ImpulseResponse:
    station: object
    samples: np.ndarray
    rate: float
    gamma: float = 1.0
    status: str = "ok"
    message: str = ""
    quantity: str = "displacement"

    @property
    def duration(self):
        return len(self.samples) / self.rate

    @property
    def ok(self):
        return self.status == "ok"


def build_system(config):
    return PlateSystem(
        config.layout,
        config.thickness,
        material=config.soundboard_material,
        bar_material=config.bar_material,
        boundary=config.boundary,
        dt=config.time.dt,
        substeps=config.time.substeps,
    )


def _target(system, layout, ref):
    if isinstance(ref, str):
        return system.station_target(layout.station(ref))
    return system.plate_target(tuple(ref))


def raised_cosine(amplitude, width, dt_int):
    n = max(2, int(math.ceil(width / dt_int - 1e-9)))
    t = (np.arange(n) + 0.5) * dt_int
    return amplitude * 0.5 * (1.0 - np.cos(2 * np.pi * t / width)) * (t < width)


def decimate(x, rate, q, order=8):
    """Zero-phase Butterworth low-pass at 0.45 of the output rate, then keep every q-th sample."""
    if q == 1:
        return np.asarray(x, dtype=float).copy()
    sos = butter(order, 0.45 * rate / q, fs=rate, output="sos")
    y = sosfiltfilt(sos, x, axis=0)
    n = len(x) // q
    return np.ascontiguousarray(y[::q][:n])


def simulate(config, system=None, backend=None):
    """Run one impulse-response simulation; one response per probe.

    Raises :class:`DivergenceError` naming the step and node if the state
    leaves finite range.
    """
    system = system or build_system(config)
    layout = config.layout
    state = system.new_state()
    exc = config.excitation
    target = _target(system, layout, exc.station)
    excitation = None
    if exc.kind == "velocity_impulse":
        kind, a, b = target
        if kind == 1:
            state.v[a, b] = exc.amplitude
        else:
            state.bv[a] = exc.amplitude
    else:
        width = exc.pulse_width(config.time.dt)
        excitation = (*target, raised_cosine(exc.amplitude, width, system.dt_int))
    probes = [_target(system, layout, p) for p in config.probes]
    raw = system.run(state, config.time.n_steps, gamma=config.gamma, excitation=excitation,
                     probes=probes, backend=backend)
    if config.probe_quantity == "velocity":
        raw = np.diff(raw, axis=0, prepend=0.0) / config.time.dt
    q = config.decimation
    out = decimate(raw, config.time.sample_rate, q)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite samples after decimation")
    rate = config.time.sample_rate / q
    return [
        ImpulseResponse(p, out[:, k].copy(), rate, config.gamma, quantity=config.probe_quantity)
        for k, p in enumerate(config.probes)
    ]


def _station_job(config, system, station_id, backend):
    cfg = config.for_station(station_id)
    try:
        return simulate(cfg, system=system, backend=backend)[0]
    except DivergenceError as exc:
        log.warning("station %s diverged: %s", station_id, exc)
        return ImpulseResponse(station_id, np.zeros(0), cfg.output_rate, cfg.gamma, "diverged", str(exc),
                               cfg.probe_quantity)


def run_batch(config, stations, parallelism=1, system=None, backend=None):
    """Excite and probe each station in turn; order follows ``stations``.

    Each station owns its state arrays, so thread parallelism gives the
    same samples as a sequential run. Divergences are returned as records
    with ``status='diverged'`` instead of aborting the batch.
    """
    stations = list(stations)
    if not stations:
        return []
    for s in stations:
        if isinstance(s, str):
            config.layout.station(s)
    system = system or build_system(config)
    if parallelism <= 1 or len(stations) == 1:
        return [_station_job(config, system, s, backend) for s in stations]
    with ThreadPoolExecutor(max_workers=int(parallelism)) as pool:
        return list(pool.map(lambda s: _station_job(config, system, s, backend), stations))


def closed_form_t60(gamma, dt):
    """T60 of the velocity-multiply update: amplitude decays as gamma**(n/2)."""
    return 6.0 * math.log(10.0) * dt / -math.log(gamma)


def gamma_for_t60(t60, dt):
    return math.exp(-6.0 * math.log(10.0) * dt / t60)


@dataclass(frozen=True)
class CalibrationResult:
    gamma: float
    t60: float
    iterations: int
    history: tuple = field(default=(), repr=False)


def calibrate_decrement(config, target_t60, tolerance, station=None, duration=None, lo=0.99, hi=1.0,
                        max_iter=30, system=None, backend=None):
    """Find gamma in (lo, hi) whose simulated T60 matches ``target_t60``.

    The search brackets in u = -ln(gamma), where T60 is close to 1/u, and
    refines by log-log interpolation guarded by bisection. Simulations
    that do not decay within ``duration`` count as T60 = inf.
    """
    from ..analysis import t60 as measure_t60

    if not target_t60 > 0:
        raise ValueError("target_t60 must be positive")
    if not math.isfinite(target_t60):
        raise CalibrationError("an infinite T60 is only reached by gamma = 1; the interval does not bracket it")
    if not 0 < lo < hi <= 1:
        raise ValueError("need 0 < lo < hi <= 1")
    station = station if station is not None else config.excitation.station
    base = config.for_station(station)
    dt = base.time.dt
    duration = duration or max(1.25 * target_t60, 0.1)
    n_steps = int(round(duration / dt))
    base = replace(base, time=replace(base.time, n_steps=n_steps))
    system = system or build_system(base)
    history = []

    def measure(u):
        g = math.exp(-u)
        try:
            ir = simulate(base.with_gamma(g), system=system, backend=backend)[0]
            val = measure_t60(ir)
        except InsufficientDecayError:
            val = math.inf
        except DivergenceError as exc:
            raise CalibrationError(f"simulation diverged at gamma={g:.8f}: {exc}") from exc
        history.append((g, val))
        return val

    u_lo = -math.log(hi) if hi < 1 else 0.0   # small u: long decay
    u_hi = -math.log(lo)                       # large u: short decay
    t_hi_end = measure(u_hi)
    if t_hi_end > target_t60 + tolerance:
        raise CalibrationError(
            f"even gamma={lo} gives T60={t_hi_end:.4f}s > target {target_t60}s; interval does not bracket"
        )
    if abs(t_hi_end - target_t60) <= tolerance:
        return CalibrationResult(lo, t_hi_end, 1, tuple(history))
    # The closed form seeds a tight bracket around the answer.
    u0 = -math.log(gamma_for_t60(target_t60, dt))
    a, ta = u_hi, t_hi_end                     # T60 below target
    b, tb = (u_lo, math.inf)                   # T60 above target
    for u in (u0, u0 * 0.8, u0 * 1.25):
        if not u_lo < u < u_hi:
            continue
        tu = measure(u)
        if abs(tu - target_t60) <= tolerance:
            return CalibrationResult(math.exp(-u), tu, len(history), tuple(history))
        if tu < target_t60:
            if u < a:
                a, ta = u, tu
        elif u > b:
            b, tb = u, tu
        if math.isfinite(tb) and b > 0 and ta < target_t60 < tb:
            break
    if b <= 0 and not math.isfinite(tb):
        # hi = 1 exactly: probe a geometric ladder toward undamped
        u = a
        while True:
            u /= 4
            tu = measure(u)
            if tu > target_t60:
                b, tb = u, tu
                break
            a, ta = u, tu
            if u < 1e-12:
                raise CalibrationError("target T60 not reachable below gamma = 1")
    for _ in range(max_iter):
        if math.isfinite(tb) and tb > 0 and ta > 0 and b > 0:
            # T60 ~ C u^p is linear in log-log
            p = math.log(tb / ta) / math.log(b / a)
            u = a * math.exp(math.log(target_t60 / ta) / p) if p != 0 else math.sqrt(a * b)
            lo_u, hi_u = sorted((a, b))
            span = math.log(hi_u / lo_u)
            u = min(max(u, lo_u * math.exp(0.05 * span)), hi_u * math.exp(-0.05 * span))
        else:
            u = math.sqrt(a * b)
        tu = measure(u)
        if abs(tu - target_t60) <= tolerance:
            return CalibrationResult(math.exp(-u), tu, len(history), tuple(history))
        if tu < target_t60:
            a, ta = u, tu
        else:
            b, tb = u, tu
    raise CalibrationError(f"no convergence after {len(history)} simulations; last {history[-1]}")
