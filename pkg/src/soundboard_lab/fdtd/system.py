"""Assembly of the discrete plate + stiffener-bar system.

The plate stiffness comes from the discrete bending energy

    U = dx^2/2 * sum_nodes (Dxx kxx^2 + 2 Dnu kxx kyy + Dyy kyy^2)
      + dx^2/2 * sum_cells 4 Dt kxy^2

with second differences over dx^2 at free nodes and the mixed difference
on grid cells. The time-stepping kernels evaluate the same operator as
the sparse matrix returned by :meth:`PlateSystem.stiffness_matrix`, so the
explicit scheme conserves ``PlateSystem.energy`` exactly when undamped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import binary_dilation
from scipy.sparse.linalg import eigsh, spsolve

from .. import _backend
from ..errors import DivergenceError, UnstableConfigurationError
from ..geometry import BRIDGES, COUPLED_BAR, RAIL_HEIGHT, THICKNESS_ADD
from ..materials import SPRUCE, bending_stiffness
from . import kernels

PAD = 2
BOUNDARIES = ("clamped", "simply_supported")


@dataclass
class SimState:
    """Mutable state owned by one simulation: padded plate arrays and bar vectors."""

    w: np.ndarray
    v: np.ndarray
    bu: np.ndarray
    bv: np.ndarray

    def copy(self):
        return SimState(self.w.copy(), self.v.copy(), self.bu.copy(), self.bv.copy())


@dataclass(frozen=True)
class BarInfo:
    id: str
    start: int
    nodes: tuple
    EI: float
    mass_per_length: float


class PlateSystem:
    """Plate, bars and penalty coupling, ready for explicit time stepping.

    Parameters
    ----------
    layout : SoundboardLayout
    thickness : ThicknessMap
        Must share the layout's grid.
    material, bar_material : MaterialSpec
        ``bar_material=None`` uses each stiffener's own material.
    boundary : {"clamped", "simply_supported"}
    dt : float
        Output step; ``substeps`` internal steps are taken per ``dt``.
    substeps : int or None
        ``None`` picks the smallest count that leaves stability headroom
        for the penalty springs.
    safety : float
        Required margin on the stability number omega_max * dt_int / 2.
    penalty_ratio : float
        Coupling spring over the plate's diagonal stiffness at the node.
    """

    def __init__(self, layout, thickness, material=SPRUCE, bar_material=None, boundary="clamped",
                 dt=1 / 480_000, substeps=None, safety=0.95, penalty_ratio=100.0, grain_axis="y"):
        if boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
        if thickness.grid != layout.grid:
            raise ValueError("thickness map and layout use different grids")
        if grain_axis not in ("x", "y"):
            raise ValueError("grain_axis must be 'x' or 'y'")
        self.layout = layout
        self.grid = layout.grid
        self.material = material
        self.boundary = boundary
        self.dt = float(dt)
        self.safety = float(safety)
        dx = self.grid.dx
        self.dx = dx
        ny, nx = self.grid.shape
        self.shape = (ny + 2 * PAD, nx + 2 * PAD)
        interior = (slice(PAD, PAD + ny), slice(PAD, PAD + nx))
        self._interior = interior

        free = np.zeros(self.shape, dtype=bool)
        free[interior] = layout.mask
        self.free = free

        h = np.full(self.shape, float(np.median(thickness.h[thickness.mask])) if thickness.mask.any() else 0.003)
        h[interior] = thickness.h
        for st in layout.stiffeners:
            if st.treatment == THICKNESS_ADD:
                for j, i in sorted(set(layout.chains[st.id])):
                    h[j + PAD, i + PAD] += st.height
        self.h_eff = h

        d = bending_stiffness(material, h)
        if grain_axis == "y":
            Dxx, Dyy = d.d_y, d.d_x
        else:
            Dxx, Dyy = d.d_x, d.d_y
        Dnu, Dt = d.d_nu, d.d_twist
        inv2 = 1.0 / dx**2
        self.dxx = np.where(free, Dxx * inv2, 0.0)
        self.dyy = np.where(free, Dyy * inv2, 0.0)
        self.dnu = np.where(free, Dnu * inv2, 0.0)

        closed = free | (binary_dilation(free, structure=np.ones((3, 3), bool)) & ~free)
        cell_ok = closed[:-1, :-1] & closed[:-1, 1:] & closed[1:, :-1] & closed[1:, 1:]
        cell_ok &= free[:-1, :-1] | free[:-1, 1:] | free[1:, :-1] | free[1:, 1:]
        dt_cell = 0.25 * (Dt[:-1, :-1] + Dt[:-1, 1:] + Dt[1:, :-1] + Dt[1:, 1:])
        self.dtw = np.zeros(self.shape)
        self.dtw[:-1, :-1] = np.where(cell_ok, 4.0 * dt_cell * inv2, 0.0)

        # Clamped rim: mirror ghost at the rim node (trapezoid weight) reduces
        # to a diagonal spring on the adjacent free node.
        self.kd = np.zeros(self.shape)
        if boundary == "clamped":
            for axis, D in ((1, Dxx), (0, Dyy)):
                for shift in (1, -1):
                    nb_free = np.roll(free, -shift, axis=axis)
                    self.kd += np.where(free & ~nb_free, 2.0 * D * inv2, 0.0)

        self.mass_plate = np.where(free, material.density * h * dx**2, 0.0)
        self.minv = np.where(free, 1.0 / np.where(free, self.mass_plate, 1.0), 0.0)

        self.free_idx = np.flatnonzero(free.ravel())
        self.n_plate = self.free_idx.size
        self.dof_of = np.full(free.size, -1, dtype=np.int64)
        self.dof_of[self.free_idx] = np.arange(self.n_plate)

        self._build_bars(layout, bar_material)
        self._K0 = self._assemble_uncoupled()
        self._choose_substeps(substeps)
        self._build_coupling(penalty_ratio)
        self._K = None
        self._check_gershgorin()

    # -- assembly ---------------------------------------------------------

    def _build_bars(self, layout, bar_material):
        bars = []
        mass, kap_i, kap_c, kap_w = [], [], [], []
        plate_j, plate_i = [], []
        start = 0
        dx = self.dx
        for st in layout.stiffeners:
            if st.treatment != COUPLED_BAR:
                continue
            mat = bar_material or st.material
            chain = layout.chains[st.id]
            n = len(chain)
            A = st.width * st.height
            EI = mat.E_long * st.width * st.height**3 / 12.0
            mu = mat.density * A
            seg = [dx * math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(chain[:-1], chain[1:])]
            m = np.zeros(n)
            if n == 1:
                m[0] = mu * dx
            for k, s in enumerate(seg):
                m[k] += 0.5 * mu * s
                m[k + 1] += 0.5 * mu * s
            for k in range(1, n - 1):
                s0, s1 = seg[k - 1], seg[k]
                cm = 2.0 / ((s0 + s1) * s0)
                cp = 2.0 / ((s0 + s1) * s1)
                kap_i.append((start + k - 1, start + k, start + k + 1))
                kap_c.append((cm, -(cm + cp), cp))
                kap_w.append(EI * 0.5 * (s0 + s1))
            mass.append(m)
            for j, i in chain:
                plate_j.append(j + PAD)
                plate_i.append(i + PAD)
            bars.append(BarInfo(st.id, start, tuple(chain), EI, mu))
            start += n
        self.bars = tuple(bars)
        self.n_bar = start
        self.mass_bar = np.concatenate(mass) if mass else np.zeros(0)
        self.bminv = np.where(self.mass_bar > 0, 1.0 / np.where(self.mass_bar > 0, self.mass_bar, 1.0), 0.0)
        self.kap_i = np.array(kap_i, dtype=np.int64).reshape(-1, 3)
        self.kap_c = np.array(kap_c, dtype=float).reshape(-1, 3)
        self.kap_w = np.array(kap_w, dtype=float)
        self.cp_j = np.array(plate_j, dtype=np.int64)
        self.cp_i = np.array(plate_i, dtype=np.int64)
        self.cb = np.arange(self.n_bar, dtype=np.int64)

    def _plate_operator(self):
        ny, nx = self.shape
        N = ny * nx
        ones = np.ones(N)
        A = sp.diags([ones, -2 * ones, ones], [-1, 0, 1], shape=(N, N), format="csr")
        B = sp.diags([ones, -2 * ones, ones], [-nx, 0, nx], shape=(N, N), format="csr")
        C = sp.diags([ones, -ones, -ones, ones], [0, 1, nx, nx + 1], shape=(N, N), format="csr")
        dg = lambda a: sp.diags(a.ravel())
        K = (A.T @ dg(self.dxx) @ A + A.T @ dg(self.dnu) @ B + B.T @ dg(self.dnu) @ A
             + B.T @ dg(self.dyy) @ B + C.T @ dg(self.dtw) @ C + dg(self.kd))
        K = K.tocsr()[self.free_idx][:, self.free_idx]
        return K

    def _assemble_uncoupled(self):
        Kp = self._plate_operator()
        nb = self.n_bar
        if nb == 0:
            return Kp.tocsr()
        rows, cols, vals = [], [], []
        for (i0, i1, i2), c, wgt in zip(self.kap_i, self.kap_c, self.kap_w):
            idx = (i0, i1, i2)
            for a in range(3):
                for b in range(3):
                    rows.append(idx[a])
                    cols.append(idx[b])
                    vals.append(wgt * c[a] * c[b])
        Kb = sp.csr_matrix((vals, (rows, cols)), shape=(nb, nb))
        return sp.block_diag([Kp, Kb], format="csr")

    def mass_vector(self):
        return np.concatenate([self.mass_plate.ravel()[self.free_idx], self.mass_bar])

    def _gershgorin(self, K):
        s = 1.0 / np.sqrt(self.mass_vector())
        return s * (abs(K) @ s)

    def _choose_substeps(self, substeps):
        g0 = self._gershgorin(self._K0)
        self._g0 = g0
        gmax = float(g0.max()) if g0.size else 0.0
        if substeps is None:
            # Leave half the budget for coupling springs when bars are present.
            frac = 0.5 if self.n_bar else 1.0
            need = self.dt * math.sqrt(gmax) / (2.0 * self.safety * math.sqrt(frac)) if gmax > 0 else 1.0
            substeps = max(1, math.ceil(need - 1e-12))
        self.substeps = int(substeps)
        self.dt_int = self.dt / self.substeps
        self.budget = (2.0 * self.safety / self.dt_int) ** 2

    def _build_coupling(self, penalty_ratio):
        nb = self.n_bar
        if nb == 0:
            self.ck = np.zeros(0)
            return
        pdof = self.dof_of[self.cp_j * self.shape[1] + self.cp_i]
        if np.any(pdof < 0):
            raise ValueError("a stiffener node sits on a fixed plate node")
        self._cp_dof = pdof
        kdiag = self._K0.diagonal()
        mp = self.mass_vector()[pdof]
        mb = self.mass_bar
        counts = np.bincount(pdof, minlength=self.n_plate)[pdof]
        head_p = np.maximum(self.budget - self._g0[pdof], 0.0) / counts
        head_b = np.maximum(self.budget - self._g0[self.n_plate + self.cb], 0.0)
        cross = 1.0 / np.sqrt(mp * mb)
        cap = np.minimum(head_p / (1.0 / mp + cross), head_b / (1.0 / mb + cross))
        self.ck = np.minimum(penalty_ratio * kdiag[pdof], cap)
        self.penalty_capped = int(np.count_nonzero(self.ck < penalty_ratio * kdiag[pdof]))

    def stiffness_matrix(self):
        """Global K over [free plate nodes, bar nodes]."""
        if self._K is None:
            K = self._K0.tolil() if self.n_bar else self._K0.copy()
            if self.n_bar:
                p = self._cp_dof
                b = self.n_plate + self.cb
                n = self.n_plate + self.n_bar
                Kc = sp.csr_matrix(
                    (np.concatenate([self.ck, self.ck, -self.ck, -self.ck]),
                     (np.concatenate([p, b, p, b]), np.concatenate([p, b, b, p]))),
                    shape=(n, n),
                )
                K = (K.tocsr() + Kc).tocsr()
            self._K = K.tocsr()
        return self._K

    def _check_gershgorin(self):
        g = self._gershgorin(self.stiffness_matrix())
        k = int(np.argmax(g))
        number = math.sqrt(g[k]) * self.dt_int / 2.0
        self.stability_number = number
        if number > self.safety * (1 + 1e-9):
            node = self.describe_dof(k)
            raise UnstableConfigurationError(
                f"explicit scheme unstable: stability number {number:.3f} > {self.safety} at {node} "
                f"with dt={self.dt:.3g}s and {self.substeps} substep(s)",
                node=node,
                stability_number=number,
            )

    # -- bookkeeping -------------------------------------------------------

    def describe_dof(self, k):
        if k < self.n_plate:
            J, I = np.unravel_index(self.free_idx[k], self.shape)
            return ("plate", int(J - PAD), int(I - PAD))
        b = k - self.n_plate
        for bar in self.bars:
            if bar.start <= b < bar.start + len(bar.nodes):
                j, i = bar.nodes[b - bar.start]
                return (bar.id, int(j), int(i))
        return ("bar", b)

    def bar_node(self, bar_id, node):
        for bar in self.bars:
            if bar.id == bar_id:
                return bar.start + bar.nodes.index(tuple(node))
        raise KeyError(bar_id)

    def station_target(self, station):
        """(kind, a, b): kind 2 drives a bridge-bar node, kind 1 a plate node."""
        bar_id = BRIDGES[station.bridge]
        if any(b.id == bar_id for b in self.bars):
            return (2, self.bar_node(bar_id, station.node), -1)
        j, i = station.node
        return (1, j + PAD, i + PAD)

    def plate_target(self, node):
        j, i = node
        if not self.free[j + PAD, i + PAD]:
            raise ValueError(f"node {node} is not a free plate node")
        return (1, j + PAD, i + PAD)

    def new_state(self):
        return SimState(np.zeros(self.shape), np.zeros(self.shape), np.zeros(self.n_bar), np.zeros(self.n_bar))

    def to_dofs(self, plate, bar=None):
        vec = np.concatenate([np.asarray(plate).ravel()[self.free_idx], np.zeros(self.n_bar) if bar is None else bar])
        return vec

    def from_dofs(self, vec):
        plate = np.zeros(self.shape)
        plate.ravel()[self.free_idx] = vec[: self.n_plate]
        return plate, np.array(vec[self.n_plate:])

    def unpad(self, plate):
        return plate[self._interior]

    def pad(self, field):
        out = np.zeros(self.shape)
        out[self._interior] = field
        return out

    def energy(self, state):
        """Conserved leapfrog energy 1/2 v'Mv + 1/2 w_prev' K w."""
        K = self.stiffness_matrix()
        w = self.to_dofs(state.w, state.bu)
        v = self.to_dofs(state.v, state.bv)
        w_prev = w - self.dt_int * v
        return 0.5 * float(v @ (self.mass_vector() * v)) + 0.5 * float(w_prev @ (K @ w))

    def modal_frequencies(self, k=6):
        """Lowest ``k`` eigenfrequencies in Hz from the assembled K and M."""
        K = self.stiffness_matrix()
        M = sp.diags(self.mass_vector())
        vals = eigsh(K, k=k, M=M, sigma=0.0, which="LM", return_eigenvectors=False)
        return np.sort(np.sqrt(np.maximum(vals, 0.0))) / (2 * math.pi)

    def static_solve(self, f_plate, f_bar=None):
        """Direct sparse solution of K u = f; independent of the stepping kernel."""
        f = self.to_dofs(f_plate, f_bar)
        u = spsolve(self.stiffness_matrix().tocsc(), f)
        return self.from_dofs(u)

    # -- stepping ------------------------------------------------------------

    def run(self, state, n_steps, gamma=1.0, fext=None, bfext=None, excitation=None, probes=(),
            check_every=256, limit=1.0, backend=None):
        """Advance ``state`` in place by ``n_steps`` output steps.

        ``gamma`` is the per-output-step velocity multiplier; each substep
        applies ``gamma ** (1 / substeps)``. ``excitation`` is
        ``(kind, a, b, series)`` with one force value per internal substep.
        ``probes`` are ``(kind, a, b)`` targets. Returns the probe history
        of shape (n_steps, n_probes).
        """
        backend = backend or _backend.backend_name()
        fn = kernels.run_numba if backend == "numba" else kernels.run_numpy
        fext = np.zeros(self.shape) if fext is None else np.ascontiguousarray(fext, dtype=float)
        bfext = np.zeros(self.n_bar) if bfext is None else np.ascontiguousarray(bfext, dtype=float)
        if excitation is None:
            exc_kind, exc_a, exc_b, series = 0, 0, 0, np.zeros(0)
        else:
            exc_kind, exc_a, exc_b, series = excitation
            series = np.ascontiguousarray(series, dtype=float)
        probes = list(probes)
        pk = np.array([p[0] for p in probes], dtype=np.int64)
        pa = np.array([p[1] for p in probes], dtype=np.int64)
        pb = np.array([p[2] for p in probes], dtype=np.int64)
        out = np.zeros((int(n_steps), len(probes)))
        g_sub = float(gamma) ** (1.0 / self.substeps)
        status, step, a, b = fn(
            state.w, state.v, self.minv, self.dxx, self.dyy, self.dnu, self.dtw, self.kd, fext,
            state.bu, state.bv, self.bminv, bfext, self.kap_i, self.kap_c, self.kap_w,
            self.cp_j, self.cp_i, self.cb, self.ck,
            int(exc_kind), int(exc_a), int(exc_b), series,
            pk, pa, pb,
            self.dt_int, g_sub, int(n_steps), self.substeps, out, int(check_every), float(limit),
            _backend.debug_enabled(),
        )
        if status:
            if b >= 0:
                where = ("plate", int(a - PAD), int(b - PAD))
            else:
                where = self.describe_dof(self.n_plate + int(a))
            raise DivergenceError(f"simulation diverged at step {step} near {where}", step=int(step), node=where)
        return out
