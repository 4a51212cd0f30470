"""Discretised soundboard: grid, thickness field, stiffener chains, string stations."""
from __future__ import annotations

import csv
import io
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import shapely
from scipy.interpolate import RBFInterpolator

from .errors import (
    DegenerateBoundaryError,
    LayoutSchemaError,
    PathOutsideMaskError,
    SampleOutsideBoundaryError,
    StationOffBridgeError,
    TooFewSamplesError,
)
from .materials import SPRUCE, MaterialSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

STIFFENER_IDS = ("bridge8", "bridge4", "cutoff_bar", "rib_1", "rib_2", "rib_3", "rib_4", "rail4")
COUPLED_BAR = "coupled_bar"
THICKNESS_ADD = "thickness_add"
BRIDGES = {"eight_foot": "bridge8", "four_foot": "bridge4"}
STRINGS_PER_KEY = {"eight_foot": 2, "four_foot": 1}
RAIL_HEIGHT = 0.01
DIAMETER_RANGE = (0.0002, 0.0005)
STATION_COLUMNS = (
    "key", "bridge", "x", "y", "scale_length_m", "diameter_m", "material", "pitch_hz", "break_angle_deg",
)


@dataclass(frozen=True)
class GridSpec:
    nx: int = 72
    ny: int = 178
    dx: float = 0.01

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3x3 nodes, got {self.nx}x{self.ny}")
        if not self.dx > 0:
            raise ValueError(f"dx must be positive, got {self.dx}")

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def extent(self):
        return ((self.nx - 1) * self.dx, (self.ny - 1) * self.dx)

    def coords(self):
        """Node coordinates as (X, Y) arrays of shape (ny, nx)."""
        x = np.arange(self.nx) * self.dx
        y = np.arange(self.ny) * self.dx
        return np.meshgrid(x, y)

    def nearest_node(self, x, y):
        i = int(np.clip(np.rint(x / self.dx), 0, self.nx - 1))
        j = int(np.clip(np.rint(y / self.dx), 0, self.ny - 1))
        return (j, i)

    def position(self, node):
        j, i = node
        return (i * self.dx, j * self.dx)

    def rescaled(self, dx):
        """Grid covering the same extent at a different spacing (desk-scale runs)."""
        lx, ly = self.extent
        return GridSpec(int(math.floor(lx / dx + 1e-9)) + 1, int(math.floor(ly / dx + 1e-9)) + 1, dx)


@dataclass(frozen=True)
class ThicknessSample:
    x: float
    y: float
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"thickness must be positive, got {self.h}")


def load_thickness_samples(path):
    """Read ``x_m,y_m,h_mm`` CSV; thickness is returned in meters."""
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"x_m", "y_m", "h_mm"} - set(reader.fieldnames or ())
        if missing:
            raise LayoutSchemaError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            samples.append(ThicknessSample(float(row["x_m"]), float(row["y_m"]), float(row["h_mm"]) * 1e-3))
    return samples


def save_thickness_samples(path, samples):
    with open(path, "w", newline="") as fh:
        fh.write("x_m,y_m,h_mm\n")
        for s in samples:
            fh.write(f"{s.x:.4f},{s.y:.4f},{s.h * 1e3:.3f}\n")


@dataclass(frozen=True, eq=False)
class ThicknessMap:
    grid: GridSpec
    h: np.ndarray
    mask: np.ndarray
    smoothing: float = 0.0
    rms_misfit: float = 0.0

    def at(self, x, y):
        return float(self.h[self.grid.nearest_node(x, y)])

    @classmethod
    def uniform(cls, grid, mask, h):
        return cls(grid, np.full(grid.shape, float(h)), np.asarray(mask, dtype=bool))


def boundary_polygon(vertices):
    pts = [tuple(map(float, v)) for v in vertices]
    if len(pts) < 3:
        raise DegenerateBoundaryError("boundary needs at least 3 vertices")
    poly = shapely.Polygon(pts)
    if not poly.is_valid or not poly.is_simple:
        raise DegenerateBoundaryError("boundary polygon is self-intersecting or invalid")
    if poly.area <= 0:
        raise DegenerateBoundaryError("boundary polygon has zero area")
    return poly


def boundary_mask(grid, vertices):
    """Nodes strictly inside the polygon; nodes on the outline are clamped rim."""
    poly = boundary_polygon(vertices)
    X, Y = grid.coords()
    return shapely.contains_xy(poly, X, Y)


def rectangle(width, height):
    return [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)]


def _fit_misfit(xy, h, smoothing):
    model = RBFInterpolator(xy, h, kernel="thin_plate_spline", degree=1, smoothing=smoothing)
    resid = model(xy) - h
    return model, resid


def interpolate_thickness(samples, grid, boundary, clamp=(0.002, 0.008), rms_target=0.02, max_target=0.05):
    """Smoothing thin-plate spline fit of scattered thickness samples onto the grid.

    The smoothing weight is the largest one keeping the RMS misfit at the
    samples within ``rms_target`` of the mean thickness and every single
    misfit within ``max_target``; the result is clamped to ``clamp``.
    """
    h_min, h_max = clamp
    if not (0 < h_min < h_max):
        raise ValueError(f"clamp bounds must be positive and ordered, got {clamp}")
    if len(samples) < 4:
        raise TooFewSamplesError(f"need at least 4 thickness samples, got {len(samples)}")
    poly = boundary_polygon(boundary)
    xy = np.array([(s.x, s.y) for s in samples], dtype=float)
    h = np.array([s.h for s in samples], dtype=float)
    dist = shapely.distance(poly, shapely.points(xy))
    bad = np.flatnonzero(dist > grid.dx + 1e-12)
    if bad.size:
        k = bad[0]
        raise SampleOutsideBoundaryError(
            f"{bad.size} samples lie outside the boundary, e.g. ({xy[k, 0]:.3f}, {xy[k, 1]:.3f})"
        )

    # Fit in units of the board's larger dimension so the smoothing weight is scale free.
    scale = max(grid.extent)
    xs = xy / scale
    mean_h = h.mean()

    def acceptable(s):
        _, r = _fit_misfit(xs, h, s)
        rel = np.abs(r) / h
        return np.sqrt(np.mean(r**2)) <= rms_target * mean_h and rel.max() <= max_target

    lo, hi = 0.0, None
    s = 1e-8
    while s < 1e4 and acceptable(s):
        lo, s = s, s * 10
    if s < 1e4:
        hi = s
        for _ in range(30):
            mid = math.sqrt(hi * lo) if lo > 0 else hi / 10
            if acceptable(mid):
                lo = mid
            else:
                hi = mid
            if lo > 0 and hi / lo < 1.05:
                break
    model, resid = _fit_misfit(xs, h, lo)
    X, Y = grid.coords()
    field_h = model(np.column_stack([X.ravel(), Y.ravel()]) / scale).reshape(grid.shape)
    mask = boundary_mask(grid, boundary)
    return ThicknessMap(
        grid=grid,
        h=np.clip(field_h, h_min, h_max),
        mask=mask,
        smoothing=lo,
        rms_misfit=float(np.sqrt(np.mean(resid**2))),
    )


@dataclass(frozen=True)
class StiffenerPath:
    id: str
    polyline: tuple
    height: float
    width: float
    material: MaterialSpec = SPRUCE
    treatment: str = COUPLED_BAR

    def __post_init__(self):
        if self.id not in STIFFENER_IDS:
            raise LayoutSchemaError(f"unknown stiffener id {self.id!r}")
        if len(self.polyline) < 2:
            raise LayoutSchemaError(f"{self.id}: polyline needs at least 2 points")
        if self.treatment not in (COUPLED_BAR, THICKNESS_ADD):
            raise LayoutSchemaError(f"{self.id}: unknown treatment {self.treatment!r}")
        if self.id == "rail4":
            if self.treatment != THICKNESS_ADD:
                raise LayoutSchemaError("rail4 must use treatment = thickness_add")
            if not math.isclose(self.height, RAIL_HEIGHT, rel_tol=1e-9):
                raise LayoutSchemaError(f"rail4 height must be {RAIL_HEIGHT} m, got {self.height}")
        elif self.treatment != COUPLED_BAR:
            raise LayoutSchemaError(f"{self.id} must use treatment = coupled_bar")
        if not (self.height > 0 and self.width > 0):
            raise LayoutSchemaError(f"{self.id}: cross-section must be positive")


def _segment_nodes(a, b):
    """8-connected DDA between two nodes, canonical in direction."""
    if b < a:
        return _segment_nodes(b, a)[::-1]
    (j0, i0), (j1, i1) = a, b
    n = max(abs(j1 - j0), abs(i1 - i0))
    if n == 0:
        return [a]
    k = np.arange(n + 1)
    # floor(x + 1/2) on exact rationals keeps the rule deterministic
    jj = j0 + np.floor((2 * k * (j1 - j0) + n) / (2 * n)).astype(int)
    ii = i0 + np.floor((2 * k * (i1 - i0) + n) / (2 * n)).astype(int)
    return list(zip(jj.tolist(), ii.tolist()))


def rasterize_path(path, grid, mask=None):
    """Ordered, 8-connected node chain following the polyline."""
    vertices = [grid.nearest_node(x, y) for x, y in path.polyline]
    chain = []
    for a, b in zip(vertices[:-1], vertices[1:]):
        for node in _segment_nodes(a, b):
            if not chain or chain[-1] != node:
                chain.append(node)
    if len(vertices) == 1 or len(chain) == 0:
        chain = vertices[:1]
    if mask is not None:
        outside = [n for n in chain if not mask[n]]
        if outside:
            raise PathOutsideMaskError(f"{path.id}: {len(outside)} chain nodes outside the soundboard, e.g. {outside[0]}")
    return chain


@dataclass(frozen=True)
class StringStation:
    key: int
    bridge: str
    node: tuple
    x: float
    y: float
    scale_length: float
    diameter: float
    material: str
    pitch: float
    break_angle: float
    n_strings: int = 1

    @property
    def id(self):
        return f"{self.bridge}_{self.key:02d}"


@dataclass(frozen=True, eq=False)
class SoundboardLayout:
    grid: GridSpec
    boundary: tuple
    stiffeners: tuple
    stations: tuple
    mask: np.ndarray
    chains: dict
    notes: dict = field(default_factory=dict)

    def station(self, station_id):
        for s in self.stations:
            if s.id == station_id:
                return s
        raise KeyError(f"no station {station_id!r}")

    def stiffener(self, stiffener_id):
        for s in self.stiffeners:
            if s.id == stiffener_id:
                return s
        raise KeyError(f"no stiffener {stiffener_id!r}")

    def has_stiffener(self, stiffener_id):
        return any(s.id == stiffener_id for s in self.stiffeners)

    @property
    def station_ids(self):
        return [s.id for s in self.stations]


def _snap_station(station, layout_grid, chains, mask):
    chain_id = BRIDGES[station.bridge]
    if chain_id in chains:
        nodes = np.array(chains[chain_id], dtype=float)
        pos = nodes[:, ::-1] * layout_grid.dx
        d = np.hypot(pos[:, 0] - station.x, pos[:, 1] - station.y)
        k = int(np.argmin(d))
        if d[k] > 0.75 * layout_grid.dx:
            raise StationOffBridgeError(
                f"station {station.id} at ({station.x:.3f}, {station.y:.3f}) is "
                f"{d[k] * 100:.1f} cm from the {chain_id} chain"
            )
        return tuple(chains[chain_id][k])
    node = layout_grid.nearest_node(station.x, station.y)
    if not mask[node]:
        raise StationOffBridgeError(f"station {station.id} lies outside the soundboard")
    return node


def make_layout(grid, boundary, stiffeners=(), stations=(), notes=None):
    """Validate the pieces and snap stations onto their rasterised bridges."""
    boundary = tuple(tuple(map(float, v)) for v in boundary)
    mask = boundary_mask(grid, boundary)
    if not mask.any():
        raise DegenerateBoundaryError("boundary contains no grid nodes")
    ids = [s.id for s in stiffeners]
    if len(set(ids)) != len(ids):
        raise LayoutSchemaError("duplicate stiffener ids")
    chains = {s.id: rasterize_path(s, grid, mask) for s in stiffeners}
    seen = set()
    snapped = []
    for st in stations:
        if st.bridge not in BRIDGES:
            raise LayoutSchemaError(f"unknown bridge {st.bridge!r}")
        if not 1 <= st.key <= 52:
            raise LayoutSchemaError(f"key must be in 1..52, got {st.key}")
        if not DIAMETER_RANGE[0] - 1e-12 <= st.diameter <= DIAMETER_RANGE[1] + 1e-12:
            raise LayoutSchemaError(f"{st.id}: diameter {st.diameter} outside {DIAMETER_RANGE}")
        if not 0 <= st.break_angle < math.pi / 2:
            raise LayoutSchemaError(f"{st.id}: break angle must be in [0, 90) degrees")
        if st.id in seen:
            raise LayoutSchemaError(f"duplicate station {st.id}")
        seen.add(st.id)
        snapped.append(replace(st, node=_snap_station(st, grid, chains, mask)))
    return SoundboardLayout(
        grid=grid,
        boundary=boundary,
        stiffeners=tuple(stiffeners),
        stations=tuple(snapped),
        mask=mask,
        chains=chains,
        notes=dict(notes or {}),
    )


def _require(table, key, where):
    if key not in table:
        raise LayoutSchemaError(f"{where}: missing key {key!r}")
    return table[key]


def _parse_stations(table, where):
    columns = [c.strip() for c in str(table.get("columns", ",".join(STATION_COLUMNS))).split(",")]
    missing = set(STATION_COLUMNS) - set(columns)
    if missing:
        raise LayoutSchemaError(f"{where}: station table lacks columns {sorted(missing)}")
    reader = csv.DictReader(io.StringIO(str(_require(table, "rows", where)).strip()), fieldnames=columns)
    stations = []
    for n, row in enumerate(reader, 1):
        try:
            bridge = row["bridge"].strip()
            stations.append(
                StringStation(
                    key=int(row["key"]),
                    bridge=bridge,
                    node=(-1, -1),
                    x=float(row["x"]),
                    y=float(row["y"]),
                    scale_length=float(row["scale_length_m"]),
                    diameter=float(row["diameter_m"]),
                    material=row["material"].strip(),
                    pitch=float(row["pitch_hz"]),
                    break_angle=math.radians(float(row["break_angle_deg"])),
                    n_strings=int(row["n_strings"]) if row.get("n_strings") else STRINGS_PER_KEY.get(bridge, 1),
                )
            )
        except (TypeError, ValueError, AttributeError) as exc:
            raise LayoutSchemaError(f"{where}: bad station row {n}: {exc}") from exc
    return stations


def build_layout(layout_file, dx=None):
    """Parse a TOML layout file. ``dx`` re-grids the same outline (desk-scale)."""
    path = Path(layout_file)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise LayoutSchemaError(f"{path}: {exc}") from exc
    where = str(path)
    g = _require(doc, "grid", where)
    try:
        grid = GridSpec(int(_require(g, "nx", where)), int(_require(g, "ny", where)), float(_require(g, "dx", where)))
    except ValueError as exc:
        raise LayoutSchemaError(f"{where}: {exc}") from exc
    if dx is not None:
        grid = grid.rescaled(dx)
    boundary = _require(_require(doc, "boundary", where), "vertices", where)

    materials = {"spruce": SPRUCE}
    for name, table in doc.get("materials", {}).items():
        materials[name] = MaterialSpec.from_config(table)

    stiffeners = []
    for k, st in enumerate(doc.get("stiffeners", [])):
        w = f"{where} stiffener #{k}"
        mat = st.get("material", "spruce")
        if mat not in materials:
            raise LayoutSchemaError(f"{w}: unknown material {mat!r}")
        stiffeners.append(
            StiffenerPath(
                id=str(_require(st, "id", w)),
                polyline=tuple(tuple(map(float, p)) for p in _require(st, "polyline", w)),
                height=float(_require(st, "height", w)),
                width=float(_require(st, "width", w)),
                material=materials[mat],
                treatment=str(_require(st, "treatment", w)),
            )
        )
    stations = _parse_stations(doc["stations"], where) if "stations" in doc else []
    notes = {k: v for k, v in doc.get("notes", {}).items()}
    return make_layout(grid, boundary, stiffeners, stations, notes)
