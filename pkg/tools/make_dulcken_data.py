"""Generate the synthetic Dulcken layout, thickness samples and experiment config.

Scale lengths follow a Pythagorean rule (halving per octave) above f'',
stretched more slowly in the bass; bridge and outline positions are
derived from them. All values are synthetic stand-ins for unpublished
measurements. Rerunning with the same seed reproduces the files exactly.
"""
import argparse
import math
from pathlib import Path

import numpy as np
import shapely

A_REF = 392.0
N_KEYS = 52
LOWEST_MIDI = 35
X0, KEY_PITCH = 0.035, 0.0125
INSET = 0.005
SEED = 1773


def midi(k):
    return LOWEST_MIDI - 1 + k


def pitch(k):
    return A_REF * 2 ** ((midi(k) - 69) / 12)


def scale8(k):
    m = midi(k)
    if m >= 57:
        return 0.355 * 2 ** ((72 - m) / 12)
    return 0.355 * 2 ** (15 / 12) * 2 ** ((57 - m) / 22)


def key_x(k):
    return X0 + (k - 1) * KEY_PITCH


def y_bridge8(k):
    return scale8(k) - 0.06


def y_bridge4(k):
    return 0.5 * scale8(k) - 0.03


def y_rail(k):
    y4, y8 = y_bridge4(k), y_bridge8(k)
    return y4 + min(0.08, 0.45 * (y8 - y4))


def outline():
    bent = [(key_x(k), y_bridge8(k) + 0.11) for k in range(N_KEYS, 0, -1)]
    cheek_x = 0.71 - INSET
    return [(INSET, INSET), (cheek_x, INSET), (cheek_x, bent[0][1] - 0.01)] + bent + [(INSET, 1.77 - 0.01)]


CUTOFF = ((0.035, 0.5 * (y_rail(1) + y_bridge8(1))), (0.45, 0.33))


def cutoff_side(x, y):
    """Signed distance to the cutoff bar line; positive on the bentside (live) side."""
    (x0, y0), (x1, y1) = CUTOFF
    dx, dy = x1 - x0, y1 - y0
    n = math.hypot(dx, dy)
    return ((x - x0) * dy - (y - y0) * dx) / n * -1


def ribs(poly):
    (x0, y0), (x1, y1) = CUTOFF
    d = np.array([x1 - x0, y1 - y0])
    d /= np.linalg.norm(d)
    normal = np.array([-abs(d[1]), -abs(d[0])])
    inner = poly.buffer(-0.02)
    out = []
    for frac in (0.15, 0.38, 0.61, 0.84):
        start = np.array([x0, y0]) + frac * (np.array([x1, y1]) - np.array([x0, y0]))
        ray = shapely.LineString([start, start + 2.0 * normal])
        seg = ray.intersection(inner)
        if seg.geom_type != "LineString":
            seg = max(seg.geoms, key=lambda g: g.length)
        end = np.array(seg.coords[-1])
        out.append((tuple(np.round(start, 4)), tuple(np.round(end, 4))))
    return out


def thickness(x, y):
    """Synthetic thickness in mm."""
    t = np.clip((key_x(N_KEYS) - x) / (key_x(N_KEYS) - key_x(1)), 0, 1)
    live = 2.45 + 3.25 * t**1.3
    s = cutoff_side(x, y)
    w = 1 / (1 + np.exp(-s / 0.012))
    h = w * live + (1 - w) * 4.3
    h += 3.2 * np.exp(-((x - 0.24) ** 2 + (y - 0.17) ** 2) / (2 * 0.012**2))  # glue lump
    h -= 0.2 * np.exp(-((x - 0.45) ** 2 + (y - 0.7) ** 2) / (2 * 0.05**2))  # planed dip
    return h


def gauge8(k, brass_top=46):
    """8' gauge: brass tapers geometrically to the iron gauge, iron stays at 0.2 mm."""
    n = brass_top - LOWEST_MIDI + 2  # first iron key
    return 0.0005 * (0.0002 / 0.0005) ** (min(k - 1, n - 1) / (n - 1))


def gauge4(k):
    return 0.0003 + (0.0002 - 0.0003) * (k - 1) / (N_KEYS - 1)


def stations_rows():
    rows = []
    for bridge, y_of, frac, gauge, brass_top, angle in (
        ("eight_foot", y_bridge8, 1.0, gauge8, 46, 10.0),
        ("four_foot", y_bridge4, 0.5, gauge4, 53, 12.0),
    ):
        for k in range(1, N_KEYS + 1):
            d = gauge(k)
            f = pitch(k) * (1 if bridge == "eight_foot" else 2)
            mat = "brass" if midi(k) <= brass_top else "iron"
            rows.append(
                f"{k},{bridge},{key_x(k):.4f},{y_of(k):.4f},{frac * scale8(k):.4f},"
                f"{d:.6f},{mat},{f:.4f},{angle:.1f}"
            )
    return rows


def fmt_points(pts):
    return "[" + ", ".join(f"[{x:.4f}, {y:.4f}]" for x, y in pts) + "]"


def layout_toml(poly):
    lines = [
        "# Synthetic Dulcken soundboard layout (generated by tools/make_dulcken_data.py)",
        "[grid]",
        "nx = 72",
        "ny = 178",
        "dx = 0.01",
        "",
        "[boundary]",
        f"vertices = {fmt_points(outline())}",
        "",
    ]

    def stiffener(sid, treatment, height, width, pts):
        lines.extend([
            "[[stiffeners]]",
            f'id = "{sid}"',
            f'treatment = "{treatment}"',
            f"height = {height}",
            f"width = {width}",
            f"polyline = {fmt_points(pts)}",
            "",
        ])

    keys = range(1, N_KEYS + 1)
    stiffener("bridge8", "coupled_bar", 0.016, 0.012, [(key_x(k), y_bridge8(k)) for k in keys])
    stiffener("bridge4", "coupled_bar", 0.012, 0.010, [(key_x(k), y_bridge4(k)) for k in keys])
    stiffener("rail4", "thickness_add", 0.01, 0.01, [(key_x(k), y_rail(k)) for k in keys])
    stiffener("cutoff_bar", "coupled_bar", 0.02, 0.01, list(CUTOFF))
    for n, pts in enumerate(ribs(poly), 1):
        stiffener(f"rib_{n}", "coupled_bar", 0.02, 0.008, list(pts))
    lines.extend([
        "[stations]",
        'columns = "key,bridge,x,y,scale_length_m,diameter_m,material,pitch_hz,break_angle_deg"',
        'rows = """',
        *stations_rows(),
        '"""',
        "",
        "[notes]",
        'scale_lengths = "synthetic: halving per octave above f2, slower stretch in the bass"',
        'break_angles = "assumed: 10 deg on the 8ft bridge, 12 deg on the 4ft bridge"',
        'gauges = "synthetic: 8ft brass 0.5 to 0.2 mm geometric, iron 0.2 mm; 4ft 0.3 to 0.2 mm linear"',
        "",
    ])
    return "\n".join(lines)


def samples(poly, rng):
    pts = []
    for row in stations_rows():
        f = row.split(",")
        pts.append((float(f[2]), float(f[3]) + 0.02))
    # the glue lump and a ring along the rim are measured densely
    for r, a in [(0.0, 0.0)] + [(0.012, k * math.pi / 3) for k in range(6)]:
        pts.append((0.24 + r * math.cos(a), 0.17 + r * math.sin(a)))
    inner = poly.buffer(-0.008)
    ring = inner.exterior
    for d in np.linspace(0, ring.length, 64, endpoint=False):
        q = ring.interpolate(d)
        pts.append((q.x, q.y))
    minx, miny, maxx, maxy = inner.bounds
    while len(pts) < 497:
        x, y = rng.uniform(minx, maxx), rng.uniform(miny, maxy)
        if inner.contains(shapely.Point(x, y)):
            pts.append((x, y))
    out = []
    for x, y in pts:
        h = thickness(x, y) + rng.normal(0, 0.02)
        # positions carry about 1 mm of measurement uncertainty
        out.append((x + rng.uniform(-0.001, 0.001), y + rng.uniform(-0.001, 0.001), h))
    return out


EXPERIMENT = """# Dulcken aging and statics experiment
name = "dulcken"
layout = "dulcken_layout.toml"
thickness_samples = "dulcken_thickness.csv"
damping_targets = [0.163, 0.235, 0.306]
stations = "all"
output_dir = "runs/dulcken"
seed = 1773

[simulation]
sample_rate = 480000
output_rate = 96000
excitation = "raised_cosine"
reference_station = "eight_foot_26"
calibration_tolerance = 0.003

[desk_scale]
dx = 0.02
sample_rate = 192000
output_rate = 48000
"""


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/soundboard_lab/data"))
    p.add_argument("--seed", type=int, default=SEED)
    args = p.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    poly = shapely.Polygon(outline())
    assert poly.is_valid
    (out / "dulcken_layout.toml").write_text(layout_toml(poly))
    rng = np.random.default_rng(args.seed)
    with open(out / "dulcken_thickness.csv", "w") as fh:
        fh.write("x_m,y_m,h_mm\n")
        for x, y, h in samples(poly, rng):
            fh.write(f"{x:.4f},{y:.4f},{h:.3f}\n")
    (out / "dulcken.toml").write_text(EXPERIMENT)


if __name__ == "__main__":
    main()
