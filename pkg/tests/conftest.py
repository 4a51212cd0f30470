"""Shared fixtures: small rectangular boards and the bundled Dulcken data."""
import csv
import functools

import numpy as np
import pytest

from soundboard_lab import runner
from soundboard_lab.geometry import (
    GridSpec,
    StiffenerPath,
    StringStation,
    ThicknessMap,
    ThicknessSample,
    make_layout,
    rectangle,
    save_thickness_samples,
)
from soundboard_lab.materials import MaterialSpec

STEEL = MaterialSpec(E_long=2e11, anisotropy_ratio=1.0, density=7850.0, poisson_major=0.3)


def rect_layout(width=0.2, height=0.25, dx=0.01, stiffeners=(), stations=()):
    """Rectangular board whose outline passes through the outer grid nodes."""
    nx = int(round(width / dx)) + 1
    ny = int(round(height / dx)) + 1
    grid = GridSpec(nx, ny, dx)
    return make_layout(grid, rectangle((nx - 1) * dx, (ny - 1) * dx), stiffeners, stations)


def station(key, bridge, x, y, **kw):
    args = dict(scale_length=0.5, diameter=0.0003, material="iron", pitch=440.0, break_angle=np.radians(10.0),
                n_strings=2 if bridge == "eight_foot" else 1)
    args.update(kw)
    return StringStation(key=key, bridge=bridge, node=(-1, -1), x=x, y=y, **args)


def bridged_layout(dx=0.01):
    """Small board with both bridges, the rail and four stations per bridge."""
    w, h = 0.3, 0.4
    stiff = (
        StiffenerPath("bridge8", ((0.05, 0.30), (0.25, 0.30)), 0.016, 0.012),
        StiffenerPath("bridge4", ((0.05, 0.15), (0.25, 0.15)), 0.012, 0.01),
        StiffenerPath("rail4", ((0.05, 0.20), (0.25, 0.20)), 0.01, 0.01, treatment="thickness_add"),
    )
    sts = [station(k, "eight_foot", 0.05 + 0.05 * (k - 1), 0.30) for k in range(1, 5)]
    sts += [station(k, "four_foot", 0.05 + 0.05 * (k - 1), 0.15) for k in range(1, 5)]
    return rect_layout(w, h, dx, stiff, sts)


def uniform_map(layout, h=0.003):
    return ThicknessMap.uniform(layout.grid, layout.mask, h)


MINI_LAYOUT = """
[grid]
nx = 16
ny = 21
dx = 0.02

[boundary]
vertices = [[0.0, 0.0], [0.3, 0.0], [0.3, 0.4], [0.0, 0.4]]

[[stiffeners]]
id = "bridge8"
treatment = "coupled_bar"
height = 0.016
width = 0.012
polyline = [[0.04, 0.30], [0.26, 0.30]]

[[stiffeners]]
id = "bridge4"
treatment = "coupled_bar"
height = 0.012
width = 0.01
polyline = [[0.04, 0.14], [0.26, 0.14]]

[[stiffeners]]
id = "rail4"
treatment = "thickness_add"
height = 0.01
width = 0.01
polyline = [[0.04, 0.20], [0.26, 0.20]]

[stations]
columns = "key,bridge,x,y,scale_length_m,diameter_m,material,pitch_hz,break_angle_deg"
rows = \"\"\"
{rows}
\"\"\"
"""

MINI_CONFIG = """
name = "mini"
layout = "layout.toml"
thickness_samples = "thickness.csv"
damping_targets = [0.03, 0.05]
stations = "all"
output_dir = "out"
seed = 7

[simulation]
sample_rate = 96000
output_rate = 48000
reference_station = "eight_foot_03"
calibration_tolerance = 0.002
duration = 0.12
"""


def station_rows():
    rows = []
    for k in range(1, 6):
        x = 0.04 + 0.04 * (k - 1)
        rows.append(f"{k},eight_foot,{x:.2f},0.30,{0.6 - 0.05 * k:.2f},0.0003,iron,{110 * 2 ** (k / 12):.3f},10")
        rows.append(f"{k},four_foot,{x:.2f},0.14,{0.3 - 0.02 * k:.2f},0.0002,iron,{220 * 2 ** (k / 12):.3f},12")
    return "\n".join(rows)


def write_mini_experiment(tmp_path):
    """Ten-station board (five keys per bridge) with a two-target aging config."""
    (tmp_path / "layout.toml").write_text(MINI_LAYOUT.format(rows=station_rows()))
    rng = np.random.default_rng(3)
    pts = [(0, 0), (0.3, 0), (0.3, 0.4), (0, 0.4)] + [tuple(p) for p in rng.uniform([0, 0], [0.3, 0.4], (8, 2))]
    save_thickness_samples(tmp_path / "thickness.csv", [ThicknessSample(x, y, 0.003 + 0.002 * y) for x, y in pts])
    cfg = tmp_path / "mini.toml"
    cfg.write_text(MINI_CONFIG)
    return cfg


@pytest.fixture
def mini(tmp_path):
    return write_mini_experiment(tmp_path)


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@functools.lru_cache(maxsize=None)
def dulcken(desk_scale=False):
    spec = runner.load_spec(desk_scale=desk_scale or None)
    layout, tmap = runner.prepare(spec)
    return spec, layout, tmap


@pytest.fixture(scope="session")
def dulcken_full():
    return dulcken(False)


@pytest.fixture(scope="session")
def dulcken_desk():
    return dulcken(True)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, title, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
