"""String loads on the soundboard and its quasi-static response.

The static solve reuses the explicit kernel as a dynamic-relaxation
iteration: the damped system is marched under constant loads until it
comes to rest. ``solve_static_direct`` factorises the same stiffness
matrix and serves as an independent check.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import ConvergenceError, DivergenceError, LoadCaseError
from .fdtd.system import PAD, PlateSystem
from .geometry import BRIDGES, RAIL_HEIGHT
from .materials import SPRUCE, bending_stiffness

DENSITIES = {"brass": 8635.0, "iron": 7874.0}
LOAD_GROUPS = ("bridge8_bearing", "bridge4_bearing", "rail4_inplane", "rail4_normal")
GROUP_STIFFENER = {
    "bridge8_bearing": "bridge8",
    "bridge4_bearing": "bridge4",
    "rail4_inplane": "rail4",
    "rail4_normal": "rail4",
}
PARTS = ("soundboard", "bridge8", "bridge4", "rail4", "cutoff_bar", "ribs")
# overlapping nodes count toward the first part listed here
PART_PRIORITY = ("rail4", "bridge8", "bridge4", "cutoff_bar", "ribs")


def string_tension(pitch, scale_length, diameter, material_density):
    """Tension of an ideal string: T = mu (2 L f)^2 with mu = rho pi d^2 / 4."""
    mu = material_density * math.pi * diameter**2 / 4.0
    return mu * (2.0 * scale_length * pitch) ** 2


def bearing_force(tension, break_angle):
    """Downbearing of a string deflected by ``break_angle`` over a bridge."""
    if not 0 <= break_angle < math.pi / 2:
        raise ValueError("break angle must lie in [0, pi/2)")
    return 2.0 * tension * math.sin(break_angle / 2.0)


@dataclass(frozen=True)
class StringForce:
    """Loads from all strings of one station (``n_strings`` per key).

    The rail components describe the 4' hitchpin pull: ``rail_inplane``
    toward the bridge along the string, ``rail_normal`` outward.
    """

    station: str
    tension: float
    bearing_normal: float
    rail_inplane: float = 0.0
    rail_normal: float = 0.0
    n_strings: int = 1


def string_forces(stations, densities=None):
    densities = {**DENSITIES, **(densities or {})}
    out = []
    for st in stations:
        if st.material not in densities:
            raise LoadCaseError(f"{st.id}: unknown string material {st.material!r}")
        t = st.n_strings * string_tension(st.pitch, st.scale_length, st.diameter, densities[st.material])
        bear = bearing_force(t, st.break_angle)
        if st.bridge == "four_foot":
            inplane, normal = t * math.cos(st.break_angle), t * math.sin(st.break_angle)
        else:
            inplane = normal = 0.0
        out.append(StringForce(st.id, t, bear, inplane, normal, st.n_strings))
    return out


def write_string_forces_csv(path, forces):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station", "n_strings", "tension_n", "bearing_n", "rail_inplane_n", "rail_normal_n"])
        for f in forces:
            w.writerow([f.station, f.n_strings, f"{f.tension:.6f}", f"{f.bearing_normal:.6f}",
                        f"{f.rail_inplane:.6f}", f"{f.rail_normal:.6f}"])


@dataclass(frozen=True)
class PointLoad:
    """A nodal load. ``fz`` is a normal force (+ outward); ``inplane`` a
    pull toward the nut applied at the pin height above the mid-plane."""

    group: str
    target: str
    node: tuple
    fz: float = 0.0
    inplane: float = 0.0


@dataclass(frozen=True)
class LoadCase:
    toggles: frozenset
    point_forces: tuple = ()

    def net_normal_force(self):
        return math.fsum(p.fz for p in self.point_forces)

    def scaled(self, s):
        return LoadCase(self.toggles, tuple(PointLoad(p.group, p.target, p.node, p.fz * s, p.inplane * s)
                                            for p in self.point_forces))

    def only(self, group):
        return LoadCase(frozenset({group}) & self.toggles, tuple(p for p in self.point_forces if p.group == group))


def _rail_node(chain, station, grid):
    xs = np.array([i for _, i in chain]) * grid.dx
    k = int(np.argmin(np.abs(xs - station.x)))
    return tuple(chain[k])


def build_load_case(layout, forces, toggles):
    """Per-node loads for the enabled groups.

    Bridge bearing pushes inward at the station node. The 4' hitchpin pull
    lifts the rail node outward, and its in-plane part acts at the pin
    height above the mid-plane, which the plate sees as a nodal couple.
    """
    toggles = frozenset(toggles)
    unknown = toggles - set(LOAD_GROUPS)
    if unknown:
        raise LoadCaseError(f"unknown load groups {sorted(unknown)}")
    for g in toggles:
        if not layout.has_stiffener(GROUP_STIFFENER[g]):
            raise LoadCaseError(f"load group {g} needs stiffener {GROUP_STIFFENER[g]}, absent from the layout")
    by_id = {f.station: f for f in forces}
    missing = set(layout.station_ids) - set(by_id)
    if missing:
        raise LoadCaseError(f"no string force for stations {sorted(missing)[:5]}")
    loads = []
    for st in layout.stations:
        f = by_id[st.id]
        group = "bridge8_bearing" if st.bridge == "eight_foot" else "bridge4_bearing"
        if group in toggles and f.bearing_normal:
            loads.append(PointLoad(group, BRIDGES[st.bridge], tuple(st.node), fz=-f.bearing_normal))
        if st.bridge != "four_foot" or not ({"rail4_normal", "rail4_inplane"} & toggles):
            continue
        node = _rail_node(layout.chains["rail4"], st, layout.grid)
        if "rail4_normal" in toggles and f.rail_normal:
            loads.append(PointLoad("rail4_normal", "rail4", node, fz=f.rail_normal))
        if "rail4_inplane" in toggles and f.rail_inplane:
            loads.append(PointLoad("rail4_inplane", "rail4", node, inplane=f.rail_inplane))
    return LoadCase(toggles, tuple(loads))


@dataclass(eq=False)
class StaticResult:
    grid: object
    mask: np.ndarray
    displacement: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sxy: np.ndarray
    converged: bool
    residual: float
    steps: int = 0
    bar_displacement: dict = field(default_factory=dict)
    msx: np.ndarray | None = None
    msy: np.ndarray | None = None
    msxy: np.ndarray | None = None

    def __post_init__(self):
        for name in ("msx", "msy", "msxy"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.sx))

    @property
    def stress_magnitude(self):
        """Larger of the two face magnitudes of membrane plus bending stress."""
        top = np.sqrt((self.msx + self.sx)**2 + (self.msy + self.sy)**2 + (self.msxy + self.sxy)**2)
        bottom = np.sqrt((self.msx - self.sx)**2 + (self.msy - self.sy)**2 + (self.msxy - self.sxy)**2)
        return np.maximum(top, bottom)

    @property
    def peak_displacement(self):
        return float(np.max(np.abs(self.displacement)))


def _load_vectors(system, load_case):
    """Plate and bar force vectors for a load case.

    Loads on a coupled bar go to its node; an eccentric in-plane pull becomes a force pair on
    the plate nodes either side of the application node along the strings.
    """
    fp = np.zeros(system.shape)
    fb = np.zeros(system.n_bar)
    bar_ids = {b.id for b in system.bars}
    free = system.free
    dx = system.dx
    for p in load_case.point_forces:
        j, i = p.node
        if p.fz:
            if p.target in bar_ids:
                fb[system.bar_node(p.target, (j, i))] += p.fz
            else:
                fp[j + PAD, i + PAD] += p.fz
        if p.inplane:
            # lever arm: plate mid-plane to the top of the rail where the pins sit
            h = system.h_eff[j + PAD, i + PAD]
            arm = 0.5 * (h - RAIL_HEIGHT) + RAIL_HEIGHT if p.target == "rail4" else 0.5 * h
            couple = p.inplane * arm / (2 * dx)
            for dj, sign in ((1, 1.0), (-1, -1.0)):
                J, I = j + dj + PAD, i + PAD
                if free[J, I]:
                    fp[J, I] += sign * couple
    return fp, fb


def _stresses(system, w):
    """Surface bending stresses 6 M / h^2 at free nodes from padded displacement."""
    dx = system.dx
    h = system.h_eff
    d = bending_stiffness(system.material, h)
    Dxx, Dyy = d.d_y, d.d_x  # grain along the strings
    a = np.zeros_like(w)
    b = np.zeros_like(w)
    a[:, 1:-1] = (w[:, 2:] + w[:, :-2] - 2 * w[:, 1:-1]) / dx**2
    b[1:-1, :] = (w[2:, :] + w[:-2, :] - 2 * w[1:-1, :]) / dx**2
    cells = np.zeros_like(w)
    cells[:-1, :-1] = (w[1:, 1:] - w[1:, :-1] - w[:-1, 1:] + w[:-1, :-1]) / dx**2
    valid = np.zeros_like(w)
    valid[:-1, :-1] = system.dtw[:-1, :-1] > 0
    cells *= valid
    num = cells.copy()
    num[1:, :] += cells[:-1, :]
    num[:, 1:] += cells[:, :-1]
    num[1:, 1:] += cells[:-1, :-1]
    cnt = valid.copy()
    cnt[1:, :] += valid[:-1, :]
    cnt[:, 1:] += valid[:, :-1]
    cnt[1:, 1:] += valid[:-1, :-1]
    kxy = np.where(cnt > 0, num / np.maximum(cnt, 1), 0.0)
    mx = -(Dxx * a + d.d_nu * b)
    my = -(Dyy * b + d.d_nu * a)
    mxy = -2.0 * d.d_twist * kxy
    s = 6.0 / h**2
    free = system.free
    return (system.unpad(np.where(free, s * mx, 0.0)), system.unpad(np.where(free, s * my, 0.0)),
            system.unpad(np.where(free, s * mxy, 0.0)))


def _membrane_moduli(material, grain_axis="y"):
    """Plane-stress stiffness matrix (Pa) in (eps_x, eps_y, gamma_xy)."""
    e_l, e_r = material.E_long, material.E_cross
    nu_l, nu_r = material.poisson_major, material.poisson_minor
    ex, ey = (e_r, e_l) if grain_axis == "y" else (e_l, e_r)
    c = 1.0 / (1.0 - nu_l * nu_r)
    q12 = nu_r * e_l * c
    return np.array([[ex * c, q12, 0.0], [q12, ey * c, 0.0], [0.0, 0.0, material.shear_modulus]])


def _q4_strain_operators(dx):
    """Strain-displacement matrices of a square bilinear cell at its 2x2 Gauss points.

    Corner order: (0,0), (0,1), (1,0), (1,1) as (dj, di); dofs interleaved (u, v).
    """
    corners = ((0, 0), (0, 1), (1, 0), (1, 1))
    g = 0.5 / math.sqrt(3.0)
    ops = []
    for ey in (0.5 - g, 0.5 + g):
        for ex in (0.5 - g, 0.5 + g):
            B = np.zeros((3, 8))
            for k, (dj, di) in enumerate(corners):
                nx_ = (ex if di else 1 - ex)
                ny_ = (ey if dj else 1 - ey)
                dndx = (1 if di else -1) * ny_ / dx
                dndy = (1 if dj else -1) * nx_ / dx
                B[0, 2 * k] = dndx
                B[1, 2 * k + 1] = dndy
                B[2, 2 * k] = dndy
                B[2, 2 * k + 1] = dndx
            ops.append(B)
    return corners, ops


def _membrane_stresses(system, load_case):
    """Mid-plane stresses from the in-plane loads, rim held fixed in-plane.

    Bilinear plane-stress cells on the plate grid, thickness averaged over
    each cell's corners. Returns unpadded (sx, sy, sxy) in Pa.
    """
    shape = system.shape
    zero = tuple(np.zeros(system.grid.shape) for _ in range(3))
    pulls = [p for p in load_case.point_forces if p.inplane]
    if not pulls:
        return zero
    Q = _membrane_moduli(system.material)
    dx = system.dx
    corners, ops = _q4_strain_operators(dx)
    ke = sum(B.T @ Q @ B for B in ops) * dx**2 / len(ops)
    cells = np.argwhere(system.dtw[:-1, :-1] > 0)
    h = system.h_eff
    hc = 0.25 * (h[cells[:, 0], cells[:, 1]] + h[cells[:, 0] + 1, cells[:, 1]]
                 + h[cells[:, 0], cells[:, 1] + 1] + h[cells[:, 0] + 1, cells[:, 1] + 1])
    nodes = np.stack([(cells[:, 0] + dj) * shape[1] + cells[:, 1] + di for dj, di in corners], axis=1)
    dofs = np.empty((len(cells), 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    vals = (hc[:, None, None] * ke[None]).ravel()
    n = 2 * shape[0] * shape[1]
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    free_dofs = np.flatnonzero(np.repeat(system.free.ravel(), 2))
    f = np.zeros(n)
    for p in pulls:
        j, i = p.node
        f[2 * ((j + PAD) * shape[1] + i + PAD) + 1] -= p.inplane  # toward the nut, -y
    u = np.zeros(n)
    u[free_dofs] = spsolve(K[free_dofs][:, free_dofs].tocsc(), f[free_dofs])
    ue = u[dofs]
    # cell-centre stress, then averaged onto the surrounding nodes
    B0 = _q4_strain_operators(dx)[1]
    sig_c = (Q @ (sum(B0) / len(B0)) @ ue.T).T
    acc = np.zeros((3,) + shape)
    cnt = np.zeros(shape)
    for dj, di in corners:
        np.add.at(cnt, (cells[:, 0] + dj, cells[:, 1] + di), 1.0)
        for c in range(3):
            np.add.at(acc[c], (cells[:, 0] + dj, cells[:, 1] + di), sig_c[:, c])
    out = np.where(system.free & (cnt > 0), acc / np.maximum(cnt, 1.0), 0.0)
    return tuple(system.unpad(out[c]).copy() for c in range(3))


def _result(system, w_pad, bu, converged, residual, steps, load_case=None):
    sx, sy, sxy = _stresses(system, w_pad)
    membrane = _membrane_stresses(system, load_case or LoadCase(frozenset()))
    bars = {b.id: bu[b.start:b.start + len(b.nodes)].copy() for b in system.bars}
    return StaticResult(system.grid, system.layout.mask.copy(), system.unpad(w_pad).copy(), sx, sy, sxy,
                        converged, residual, steps, bars, *membrane)


def static_system(layout, thickness_map, material=SPRUCE, boundary="clamped", dt=1 / 480_000):
    return PlateSystem(layout, thickness_map, material=material, boundary=boundary, dt=dt, substeps=None)


def solve_static(layout, thickness_map, material=SPRUCE, load_case=None, *, system=None, boundary="clamped",
                 kinetic_tol=1e-12, residual_tol=1e-9, max_steps=2_000_000, chunk=2000, gamma=None,
                 backend=None):
    """Dynamic relaxation of the damped plate + bars under constant loads.

    The velocity multiplier defaults to critical damping of the lowest mode.
    Marching stops once kinetic energy has fallen below ``kinetic_tol`` of
    its peak and the force residual is below ``residual_tol`` of the load.
    """
    system = system or static_system(layout, thickness_map, material, boundary)
    load_case = load_case or LoadCase(frozenset())
    fp, fb = _load_vectors(system, load_case)
    state = system.new_state()
    f = system.to_dofs(fp, fb)
    fnorm = float(np.linalg.norm(f))
    if fnorm == 0.0:
        return _result(system, state.w, state.bu, True, 0.0, 0, load_case)
    if not np.all(np.isfinite(f)):
        raise ValueError("loads must be finite")
    if gamma is None:
        omega1 = 2 * math.pi * float(system.modal_frequencies(1)[0])
        gamma = math.exp(-2.0 * omega1 * system.dt)
    K = system.stiffness_matrix()
    m = system.mass_vector()
    peak = 0.0
    steps = 0
    residual = math.inf
    n = 8  # short chunks first so the kinetic-energy peak is resolved
    while steps < max_steps:
        n = min(2 * n, chunk)
        try:
            system.run(state, n, gamma=gamma, fext=fp, bfext=fb, check_every=n, limit=1e3,
                       backend=backend)
        except DivergenceError as exc:
            raise DivergenceError(f"dynamic relaxation diverged: {exc}", exc.step, exc.node) from exc
        steps += n
        v = system.to_dofs(state.v, state.bv)
        ke = 0.5 * float(v @ (m * v))
        peak = max(peak, ke)
        if ke <= kinetic_tol * peak:
            u = system.to_dofs(state.w, state.bu)
            residual = float(np.linalg.norm(K @ u - f)) / fnorm
            if residual <= residual_tol:
                return _result(system, state.w, state.bu, True, residual * fnorm, steps, load_case)
    raise ConvergenceError(f"dynamic relaxation did not converge in {steps} steps (residual {residual:.2e})")


def solve_static_direct(layout, thickness_map, material=SPRUCE, load_case=None, *, system=None,
                        boundary="clamped"):
    """Sparse direct solution of the same discrete equilibrium."""
    system = system or static_system(layout, thickness_map, material, boundary)
    load_case = load_case or LoadCase(frozenset())
    fp, fb = _load_vectors(system, load_case)
    w, bu = system.static_solve(fp, fb)
    u = system.to_dofs(w, bu)
    res = float(np.linalg.norm(system.stiffness_matrix() @ u - system.to_dofs(fp, fb)))
    return _result(system, w, bu, True, res, 0, load_case)


def part_masks(layout):
    """Disjoint node masks for the soundboard parts; overlaps resolved by priority."""
    taken = np.zeros(layout.grid.shape, dtype=bool)
    masks = {}
    for part in PART_PRIORITY:
        m = np.zeros(layout.grid.shape, dtype=bool)
        ids = [s.id for s in layout.stiffeners if (s.id.startswith("rib_") if part == "ribs" else s.id == part)]
        for sid in ids:
            for node in layout.chains[sid]:
                m[node] = True
        m &= layout.mask & ~taken
        taken |= m
        masks[part] = m
    masks["soundboard"] = layout.mask & ~taken
    return {p: masks[p] for p in PARTS}


def integrate_stress(result, region=None, layout=None):
    """Integral of the stress magnitude over a region, in N (stress x area).

    ``region`` is a boolean node mask, a stiffener id (needs ``layout``),
    a part name, or ``None`` for the whole soundboard.
    """
    if not result.converged:
        raise ConvergenceError("stress integration needs a converged result")
    if region is None:
        mask = result.mask
    elif isinstance(region, str):
        if layout is None:
            raise ValueError("a named region needs the layout")
        parts = part_masks(layout)
        if region in parts:
            mask = parts[region]
        else:
            mask = np.zeros(result.mask.shape, dtype=bool)
            for node in layout.chains[region]:
                mask[node] = True
    else:
        mask = np.asarray(region, dtype=bool)
    mask = mask & result.mask
    if not mask.any():
        raise ValueError("empty integration region")
    return float(result.stress_magnitude[mask].sum() * result.grid.dx**2)


def stress_breakdown(result, layout):
    """Integrated stress per part and its share of the total in percent."""
    parts = part_masks(layout)
    values = {}
    mag = result.stress_magnitude
    for p, m in parts.items():
        values[p] = float(mag[m & result.mask].sum() * result.grid.dx**2)
    total = math.fsum(values.values())
    return {p: (v, 100.0 * v / total if total > 0 else 0.0) for p, v in values.items()}, total


def write_static_csv(path, result):
    X, Y = result.grid.coords()
    m = result.mask
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_m", "y_m", "w_m", "sx", "sy", "sxy"])
        for x, y, d, a, b, c in zip(X[m], Y[m], result.displacement[m], result.sx[m], result.sy[m],
                                    result.sxy[m]):
            w.writerow([f"{x:.4f}", f"{y:.4f}", f"{d:.6e}", f"{a:.6e}", f"{b:.6e}", f"{c:.6e}"])
