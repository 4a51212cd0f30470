"""Elastic and damping constants, orthotropic plate stiffness, and the
explicit-scheme stability estimate."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import MaterialError, UnstableConfigurationError


@dataclass(frozen=True)
class MaterialSpec:
    """Orthotropic wood with the grain as the stiff axis.

    ``decrement`` is the per-step velocity multiplier gamma in (0, 1].
    """

    E_long: float = 11e9
    anisotropy_ratio: float = 8.0
    density: float = 430.0
    poisson_major: float = 0.3
    decrement: float = 1.0

    def __post_init__(self):
        if not self.E_long > 0:
            raise MaterialError(f"E_long must be positive, got {self.E_long}")
        if not self.anisotropy_ratio >= 1:
            raise MaterialError(f"anisotropy_ratio must be >= 1, got {self.anisotropy_ratio}")
        if not self.density > 0:
            raise MaterialError(f"density must be positive, got {self.density}")
        if not 0 < self.poisson_major < 0.5:
            raise MaterialError(f"poisson_major must lie in (0, 0.5), got {self.poisson_major}")
        if not 0 < self.decrement <= 1:
            raise MaterialError(f"decrement must lie in (0, 1], got {self.decrement}")
        if not 1 - self.poisson_major * self.poisson_minor > 0:
            raise MaterialError("Poisson pair makes the stiffness matrix indefinite")

    @property
    def E_cross(self):
        return self.E_long / self.anisotropy_ratio

    @property
    def poisson_minor(self):
        return self.poisson_major / self.anisotropy_ratio

    @property
    def shear_modulus(self):
        # Huber's estimate; reduces to E / (2(1 + nu)) when isotropic.
        nu = math.sqrt(self.poisson_major * self.poisson_minor)
        return math.sqrt(self.E_long * self.E_cross) / (2 * (1 + nu))

    def with_decrement(self, gamma):
        return replace(self, decrement=float(gamma))

    @classmethod
    def from_config(cls, table, base=None):
        """Build from config keys E_long_pa, anisotropy_ratio, density, poisson, decrement."""
        base = base or cls()
        keys = {
            "E_long_pa": "E_long",
            "anisotropy_ratio": "anisotropy_ratio",
            "density": "density",
            "poisson": "poisson_major",
            "decrement": "decrement",
        }
        unknown = set(table) - set(keys)
        if unknown:
            raise MaterialError(f"unknown material keys: {sorted(unknown)}")
        return replace(base, **{keys[k]: float(v) for k, v in table.items()})


SPRUCE = MaterialSpec()


@dataclass(frozen=True)
class TimeSpec:
    """Output-rate time step ``dt`` and step count.

    ``substeps`` splits each step into equal internal steps; ``None`` lets
    the solver pick the smallest stable count.
    """

    dt: float = 1 / 480_000
    n_steps: int = 0
    substeps: int | None = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.substeps is not None and self.substeps < 1:
            raise ValueError("substeps must be >= 1 or None")

    @property
    def sample_rate(self):
        return 1.0 / self.dt

    @property
    def duration(self):
        return self.n_steps * self.dt

    @classmethod
    def from_rate(cls, sample_rate, duration, substeps=1):
        return cls(dt=1.0 / sample_rate, n_steps=int(round(duration * sample_rate)), substeps=substeps)


class BendingStiffness(NamedTuple):
    """Plate rigidities in N*m; ``d_x`` is along the grain."""

    d_x: np.ndarray
    d_y: np.ndarray
    d_nu: np.ndarray
    d_twist: np.ndarray

    @property
    def h_coupling(self):
        """H = D_x nu_yx + 2 D_twist, the mixed-derivative rigidity."""
        return self.d_nu + 2 * self.d_twist


def bending_stiffness(material, h):
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise MaterialError("thickness must be positive")
    nu_xy = material.poisson_major
    nu_yx = material.poisson_minor
    denom = 12.0 * (1.0 - nu_xy * nu_yx)
    if denom <= 0:
        raise MaterialError("non-physical Poisson combination")
    h3 = h**3
    d_x = material.E_long * h3 / denom
    d_y = material.E_cross * h3 / denom
    d_nu = nu_yx * d_x
    d_twist = material.shear_modulus * h3 / 12.0
    return BendingStiffness(d_x, d_y, d_nu, d_twist)


def grid_omega_max(material, h, dx):
    """Highest angular frequency the 13-point stencil carries at thickness h.

    The checkerboard mode maximises the stencil symbol at
    16 (D_x + 2H + D_y) / dx^4; this is also the Gershgorin bound.
    """
    d = bending_stiffness(material, h)
    total = d.d_x + 2 * d.h_coupling + d.d_y
    return 4.0 * np.sqrt(total / (material.density * np.asarray(h, dtype=float))) / dx**2


@dataclass(frozen=True)
class StabilityReport:
    stability_number: float
    node: tuple
    bandwidth_hz: float
    internal_dt: float


def check_stability(material, thickness_map, grid=None, time=None, safety=1.0):
    """Return the representable bandwidth in Hz, or raise if unstable.

    The stability number is omega_max * dt / 2 at the stiffest in-mask node;
    leapfrog is stable while it stays <= ``safety``.
    """
    return stability_report(material, thickness_map, grid, time, safety).bandwidth_hz


def stability_report(material, thickness_map, grid=None, time=None, safety=1.0):
    grid = grid or thickness_map.grid
    time = time or TimeSpec()
    dt_int = time.dt / (time.substeps or 1)
    h = np.where(thickness_map.mask, thickness_map.h, np.nan)
    omega = grid_omega_max(material, np.where(thickness_map.mask, h, 1.0), grid.dx)
    omega = np.where(thickness_map.mask, omega, np.nan)
    flat = int(np.nanargmax(omega))
    node = np.unravel_index(flat, omega.shape)
    number = float(omega[node] * dt_int / 2)
    if not number <= safety:
        raise UnstableConfigurationError(
            f"explicit scheme unstable: stability number {number:.3f} > {safety} "
            f"at node (j={node[0]}, i={node[1]}), h={h[node] * 1e3:.2f} mm",
            node=(int(node[0]), int(node[1])),
            stability_number=number,
        )
    bandwidth = min(float(np.nanmin(omega)) / (2 * math.pi), 0.5 / dt_int)
    return StabilityReport(number, (int(node[0]), int(node[1])), bandwidth, dt_int)
