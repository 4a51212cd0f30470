"""Command line entry point: ``soundboard-lab <command> [options]``.

Exit codes: 0 success, 2 partial result (some stations diverged), 1 error.
"""
import argparse
import logging
import sys
from pathlib import Path

from . import analysis, runner
from .errors import SoundboardLabError
from .fdtd import io as fdtd_io
from .fdtd.solver import run_batch

log = logging.getLogger("soundboard_lab")


def _common(p):
    p.add_argument("--config", help="experiment TOML (default: bundled Dulcken experiment)")
    p.add_argument("--out", help="output directory (default: from the config)")
    p.add_argument("--stations", help="station filter: all, eight_foot, four_foot:1-8, or ids")
    p.add_argument("--jobs", type=int, default=1, help="parallel station simulations")
    p.add_argument("--desk-scale", action="store_true", help="coarse grid and lower rate for quick runs")
    p.add_argument("-v", "--verbose", action="store_true")


def _spec(args):
    return runner.load_spec(args.config, stations=args.stations, desk_scale=args.desk_scale or None,
                            jobs=args.jobs)


def _out(args, spec):
    out = Path(args.out or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_thickness(args):
    spec = _spec(args)
    layout, tmap = runner.prepare(spec)
    out = _out(args, spec)
    X, Y = layout.grid.coords()
    m = tmap.mask
    path = out / "thickness_map.csv"
    with open(path, "w") as fh:
        fh.write("x_m,y_m,h_mm\n")
        for x, y, h in zip(X[m], Y[m], tmap.h[m]):
            fh.write(f"{x:.4f},{y:.4f},{h * 1e3:.4f}\n")
    print(f"{m.sum()} nodes, h in [{tmap.h[m].min() * 1e3:.2f}, {tmap.h[m].max() * 1e3:.2f}] mm, "
          f"rms misfit {tmap.rms_misfit * 1e3:.3f} mm -> {path}")
    return 0


def cmd_simulate(args):
    spec = _spec(args)
    layout, tmap = runner.prepare(spec)
    station = args.stations or spec.reference_station
    ids = runner.select_stations(layout, station)
    config = runner.base_config(spec, layout, tmap).with_gamma(args.gamma)
    responses = run_batch(config, ids, parallelism=args.jobs)
    out = _out(args, spec)
    rows = fdtd_io.write_batch(out, responses)
    fdtd_io.write_manifest(out / "manifest.csv", rows)
    metrics = [analysis.metrics_for(ir) for ir in responses]
    analysis.write_metrics_csv(out / "metrics.csv", metrics)
    for r in metrics:
        print(f"{r.station}: gamma={r.gamma:.8f} T60={r.t60:.4f}s centroid={r.centroid:.1f}Hz {r.status}")
    return 2 if any(not ir.ok for ir in responses) else 0


def cmd_aging(args):
    spec = _spec(args)
    report = runner.run_aging_experiment(spec, out_dir=args.out, jobs=args.jobs)
    print(report.files["report"].read_text(), end="")
    return 2 if report.partial else 0


def cmd_statics(args):
    spec = _spec(args)
    report = runner.run_statics_experiment(spec, out_dir=args.out)
    print(report.files["report"].read_text(), end="")
    return 0


def cmd_analyze(args):
    wav_dir = Path(args.wavs)
    paths = sorted(wav_dir.glob("*.wav"))
    if not paths:
        raise SoundboardLabError(f"no WAV files in {wav_dir}")
    rows = []
    for p in paths:
        station, gamma = fdtd_io.parse_wav_name(p)
        rows.append(analysis.metrics_for(fdtd_io.read_wav(p, station, gamma), f_max=args.f_max))
    out = Path(args.out or wav_dir)
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_metrics_csv(out / "metrics.csv", rows)
    gammas = sorted({r.gamma for r in rows})
    if len(gammas) >= 2:
        # smallest gamma is the most heavily damped case
        curve = analysis.centroid_difference_curve([r for r in rows if r.gamma == gammas[0]],
                                                   [r for r in rows if r.gamma == gammas[-1]])
        analysis.write_difference_csv(out / "centroid_difference.csv", curve)
    print(f"{len(rows)} responses analysed -> {out / 'metrics.csv'}")
    return 2 if any(r.status != "ok" for r in rows) else 0


def build_parser():
    p = argparse.ArgumentParser(prog="soundboard-lab", description="Soundboard simulation laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("thickness", cmd_thickness, "interpolate thickness samples and dump the map"),
        ("simulate", cmd_simulate, "simulate impulse responses at selected stations"),
        ("aging", cmd_aging, "damping sweep with T60 calibration and centroid differences"),
        ("statics", cmd_statics, "string forces and the static load-case matrix"),
        ("analyze", cmd_analyze, "T60 and centroid of existing WAV files"),
    ):
        sp = sub.add_parser(name, help=help_)
        _common(sp)
        sp.set_defaults(func=fn)
        if name == "simulate":
            sp.add_argument("--gamma", type=float, default=0.9999, help="per-step velocity decrement")
        if name == "analyze":
            sp.add_argument("wavs", help="directory of {bridge}_{key}_{gamma}.wav files")
            sp.add_argument("--f-max", type=float, default=20_000.0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SoundboardLabError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
