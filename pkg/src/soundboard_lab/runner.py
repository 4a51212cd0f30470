"""End-to-end experiments: the damping (aging) sweep and the statics toggle matrix."""
from __future__ import annotations

import csv
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, statics
from .errors import LoadCaseError, SoundboardLabError
from .fdtd import io as fdtd_io
from .fdtd.solver import Excitation, SimConfig, build_system, calibrate_decrement, run_batch
from .geometry import build_layout, interpolate_thickness, load_thickness_samples
from .materials import TimeSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

DEFAULT_TARGETS = (0.163, 0.235, 0.306)
STATICS_CASES = {
    "none": (),
    "only_bridge8": ("bridge8_bearing",),
    "only_bridge4": ("bridge4_bearing",),
    "only_rail4": ("rail4_inplane", "rail4_normal"),
    "bridges_and_rail": statics.LOAD_GROUPS,
}


def default_config_path():
    return Path(str(resources.files("soundboard_lab") / "data" / "dulcken.toml"))


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    layout: Path
    thickness_samples: Path
    damping_targets: tuple = DEFAULT_TARGETS
    stations: str = "all"
    output_dir: Path = Path("runs")
    seed: int = 0
    sample_rate: float = 480_000.0
    output_rate: float = 96_000.0
    excitation: str = "raised_cosine"
    reference_station: str = "eight_foot_26"
    calibration_tolerance: float = 0.003
    duration: float | None = None
    boundary: str = "clamped"
    probe_quantity: str = "displacement"
    desk_scale: bool = False
    desk_dx: float = 0.02
    desk_sample_rate: float = 192_000.0
    desk_output_rate: float = 48_000.0
    jobs: int = 1

    def __post_init__(self):
        if len(self.damping_targets) < 2:
            raise ValueError("need at least two damping targets for a difference curve")
        if any(not t > 0 for t in self.damping_targets):
            raise ValueError("damping targets must be positive")
        for p in (self.layout, self.thickness_samples):
            if not Path(p).exists():
                raise FileNotFoundError(f"{p} does not exist")

    @property
    def rates(self):
        if self.desk_scale:
            return self.desk_sample_rate, self.desk_output_rate
        return self.sample_rate, self.output_rate

    @property
    def sim_duration(self):
        return self.duration or 1.25 * max(self.damping_targets)

    @classmethod
    def from_toml(cls, path, **overrides):
        path = Path(path)
        doc = tomllib.loads(path.read_text())
        base = path.parent
        sim = doc.get("simulation", {})
        desk = doc.get("desk_scale", {})
        kw = dict(
            name=doc.get("name", path.stem),
            layout=base / doc["layout"],
            thickness_samples=base / doc["thickness_samples"],
            damping_targets=tuple(float(t) for t in doc.get("damping_targets", DEFAULT_TARGETS)),
            stations=str(doc.get("stations", "all")),
            output_dir=Path(doc.get("output_dir", "runs")),
            seed=int(doc.get("seed", 0)),
        )
        for key, cast in (("sample_rate", float), ("output_rate", float), ("excitation", str),
                          ("reference_station", str), ("calibration_tolerance", float), ("duration", float),
                          ("boundary", str), ("probe_quantity", str)):
            if key in sim:
                kw[key] = cast(sim[key])
        for key in ("dx", "sample_rate", "output_rate"):
            if key in desk:
                kw[f"desk_{key}"] = float(desk[key])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


def select_stations(layout, spec):
    """Station ids matching a filter.

    ``all``, a bridge name, ``bridge:lo-hi`` key ranges, or a comma list of
    any of these and explicit ids.
    """
    chosen = []
    for part in [p.strip() for p in str(spec).split(",") if p.strip()]:
        m = re.fullmatch(r"(eight_foot|four_foot)(?::(\d+)(?:-(\d+))?)?", part)
        if part == "all":
            ids = layout.station_ids
        elif m:
            lo = int(m.group(2) or 1)
            hi = int(m.group(3) or (m.group(2) or 52))
            ids = [s.id for s in layout.stations if s.bridge == m.group(1) and lo <= s.key <= hi]
        else:
            layout.station(part)
            ids = [part]
        chosen.extend(i for i in ids if i not in chosen)
    return chosen


def prepare(spec):
    """Thickness samples -> layout -> thickness map at the configured scale."""
    layout = build_layout(spec.layout, dx=spec.desk_dx if spec.desk_scale else None)
    samples = load_thickness_samples(spec.thickness_samples)
    tmap = interpolate_thickness(samples, layout.grid, layout.boundary)
    return layout, tmap


def base_config(spec, layout, tmap):
    rate, out_rate = spec.rates
    time = TimeSpec(dt=1.0 / rate, n_steps=int(round(spec.sim_duration * rate)), substeps=None)
    return SimConfig(
        layout=layout,
        thickness=tmap,
        excitation=Excitation(spec.reference_station, kind=spec.excitation),
        time=time,
        output_rate=out_rate,
        boundary=spec.boundary,
        probe_quantity=spec.probe_quantity,
    )


@dataclass
class AgingReport:
    spec: ExperimentSpec
    calibrations: dict
    metrics: list
    curve: list
    statuses: dict
    files: dict = field(default_factory=dict)

    @property
    def partial(self):
        return any(s != "ok" for s in self.statuses.values())

    def sign_changes(self, bridge="eight_foot"):
        rows = [(k, d) for b, k, d in self.curve if b == bridge]
        out = []
        for (k0, d0), (k1, d1) in zip(rows[:-1], rows[1:]):
            if np.sign(d0) != np.sign(d1):
                out.append((k0, k1))
        return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_aging_experiment(spec, out_dir=None, jobs=None):
    """Calibrate gamma per T60 target, simulate every station per target,
    and write WAVs, metrics, the centroid-difference curve and a report."""
    out = Path(out_dir or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = jobs or spec.jobs
    layout, tmap = prepare(spec)
    stations = select_stations(layout, spec.stations)
    config = base_config(spec, layout, tmap)
    system = build_system(config)
    log.info("grid %s, %d substeps, %d stations", layout.grid, system.substeps, len(stations))

    calibrations = {}
    for target in spec.damping_targets:
        res = calibrate_decrement(config, target, spec.calibration_tolerance, station=spec.reference_station,
                                  system=system)
        calibrations[target] = res
        log.info("T60 target %.3f s -> gamma %.8f (measured %.4f s)", target, res.gamma, res.t60)

    metrics, statuses, manifest = [], {}, []
    by_target = {}
    wav_dir = out / "wav"
    for target in spec.damping_targets:
        gamma = calibrations[target].gamma
        responses = run_batch(config.with_gamma(gamma), stations, parallelism=jobs, system=system)
        manifest.extend(fdtd_io.write_batch(wav_dir, responses))
        rows = [analysis.metrics_for(ir) for ir in responses]
        by_target[target] = rows
        metrics.extend(rows)
        for ir in responses:
            key = (ir.station, target)
            statuses[key] = ir.status
    high, low = min(spec.damping_targets), max(spec.damping_targets)
    curve = analysis.centroid_difference_curve(by_target[high], by_target[low])

    files = {
        "metrics": out / "metrics.csv",
        "difference": out / "centroid_difference.csv",
        "manifest": out / "manifest.csv",
        "calibration": out / "calibration.csv",
        "report": out / "report.txt",
    }
    analysis.write_metrics_csv(files["metrics"], metrics)
    analysis.write_difference_csv(files["difference"], curve)
    fdtd_io.write_manifest(files["manifest"], manifest)
    _write_csv(files["calibration"], ("target_t60_s", "gamma", "t60_s", "simulations"),
               [(f"{t:.4f}", f"{c.gamma:.10f}", f"{c.t60:.6f}", c.iterations) for t, c in calibrations.items()])
    report = AgingReport(spec, calibrations, metrics, curve, statuses, files)
    files["report"].write_text(format_aging_report(report, layout, system))
    return report


def format_aging_report(report, layout, system):
    spec = report.spec
    lines = [
        f"experiment: {spec.name}",
        f"grid: {layout.grid.nx} x {layout.grid.ny} at dx = {layout.grid.dx} m"
        + (" (desk scale)" if spec.desk_scale else ""),
        f"sample rate: {spec.rates[0]:.0f} Hz, {system.substeps} substep(s); output rate {spec.rates[1]:.0f} Hz",
        f"seed: {spec.seed}",
        "scale lengths and break angles are synthetic",
        "",
        "calibration (target T60 -> gamma, measured T60):",
    ]
    for t, c in report.calibrations.items():
        lines.append(f"  {t:.3f} s -> {c.gamma:.8f}  ({c.t60:.4f} s, {c.iterations} simulations)")
    lines += ["", "station status:"]
    for (station, target), status in sorted(report.statuses.items()):
        lines.append(f"  {station} T60={target:.3f}: {status}")
    bad = [k for k, s in report.statuses.items() if s != "ok"]
    lines += ["", f"diverged or failed: {len(bad)} of {len(report.statuses)}"]
    for bridge in ("eight_foot", "four_foot"):
        rows = [(k, d) for b, k, d in report.curve if b == bridge]
        if not rows:
            continue
        changes = report.sign_changes(bridge)
        lines.append(f"{bridge}: {len(rows)} stations in the difference curve, sign changes between keys "
                     + (", ".join(f"{a}-{b}" for a, b in changes) if changes else "none"))
        low = [d for k, d in rows if k <= 8]
        high = [d for k, d in rows if k >= 37]
        if low and high:
            lines.append(f"  mean delta SC keys 1-8: {np.mean(low):+.2f} Hz, keys 37-52: {np.mean(high):+.2f} Hz")
    return "\n".join(lines) + "\n"


@dataclass
class StaticsReport:
    spec: ExperimentSpec
    forces: list
    results: dict
    summary: list
    breakdown: dict
    files: dict = field(default_factory=dict)

    def integrated(self, case):
        return next(r["integrated_stress_n"] for r in self.summary if r["case"] == case)


def run_statics_experiment(spec, out_dir=None, cases=None):
    """String forces, the toggle matrix of load cases, and stress tables."""
    out = Path(out_dir or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    layout, tmap = prepare(spec)
    forces = statics.string_forces(layout.stations)
    cases = cases or STATICS_CASES
    system = statics.static_system(layout, tmap)
    results, summary = {}, []
    area = layout.mask.sum() * layout.grid.dx**2
    for name, groups in cases.items():
        try:
            lc = statics.build_load_case(layout, forces, groups)
        except LoadCaseError as exc:
            raise LoadCaseError(f"statics case {name}: {exc}") from exc
        res = statics.solve_static(layout, tmap, load_case=lc, system=system)
        results[name] = res
        integ = statics.integrate_stress(res)
        summary.append({
            "case": name,
            "integrated_stress_n": integ,
            "mean_stress_pa": integ / area,
            "max_outward_m": float(res.displacement.max()),
            "max_inward_m": float(res.displacement.min()),
            "net_normal_force_n": lc.net_normal_force(),
            "converged": res.converged,
        })
    full = "bridges_and_rail" if "bridges_and_rail" in results else list(results)[-1]
    breakdown, total = statics.stress_breakdown(results[full], layout)

    files = {
        "forces": out / "string_forces.csv",
        "summary": out / "statics_summary.csv",
        "breakdown": out / "stress_breakdown.csv",
        "report": out / "statics_report.txt",
    }
    statics.write_string_forces_csv(files["forces"], forces)
    _write_csv(files["summary"], list(summary[0].keys()), [
        [r["case"], f"{r['integrated_stress_n']:.6e}", f"{r['mean_stress_pa']:.6e}", f"{r['max_outward_m']:.6e}",
         f"{r['max_inward_m']:.6e}", f"{r['net_normal_force_n']:.6f}", r["converged"]]
        for r in summary
    ])
    _write_csv(files["breakdown"], ("part", "integrated_stress_n", "share_pct"),
               [(p, f"{v:.6e}", f"{s:.3f}") for p, (v, s) in breakdown.items()])
    for name, res in results.items():
        files[f"grid_{name}"] = out / f"static_{name}.csv"
        statics.write_static_csv(files[f"grid_{name}"], res)
    report = StaticsReport(spec, forces, results, summary, breakdown, files)
    files["report"].write_text(format_statics_report(report, total))
    return report


def format_statics_report(report, total):
    forces = report.forces
    f8 = [f for f in forces if f.station.startswith("eight_foot")]
    f4 = [f for f in forces if f.station.startswith("four_foot")]
    lines = [
        f"experiment: {report.spec.name} (statics, synthetic string schedule)",
        f"strings: {sum(f.n_strings for f in forces)}; total tension {math.fsum(f.tension for f in forces):.1f} N",
        f"  8ft bridge bearing {math.fsum(f.bearing_normal for f in f8):.1f} N, "
        f"4ft bridge bearing {math.fsum(f.bearing_normal for f in f4):.1f} N, "
        f"4ft rail pull {math.fsum(math.hypot(f.rail_inplane, f.rail_normal) for f in f4):.1f} N",
        "",
        "case                integrated stress [N]   mean stress [N/m^2]   outward [mm]   inward [mm]",
    ]
    for r in report.summary:
        lines.append(f"{r['case']:<18}  {r['integrated_stress_n']:>20.4f}  {r['mean_stress_pa']:>20.1f}"
                     f"  {r['max_outward_m'] * 1e3:>12.4f}  {r['max_inward_m'] * 1e3:>12.4f}")
    lines += ["", f"stress breakdown (total {total:.4f} N):"]
    for p, (v, s) in report.breakdown.items():
        lines.append(f"  {p:<12} {v:>12.4f} N  {s:6.2f} %")
    return "\n".join(lines) + "\n"


def load_spec(config=None, **overrides):
    path = Path(config) if config else default_config_path()
    try:
        return ExperimentSpec.from_toml(path, **overrides)
    except (KeyError, tomllib.TOMLDecodeError) as exc:
        raise SoundboardLabError(f"{path}: bad experiment config: {exc}") from exc
