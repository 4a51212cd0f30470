"""Independent reference solutions used by the tests."""
import math

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import eigh


def navier_frequencies(a, b, D, rho_h, count=5, n_max=12):
    """Simply supported rectangle: omega_mn = pi^2 ((m/a)^2 + (n/b)^2) sqrt(D / rho h)."""
    f = [
        math.pi / 2 * ((m / a) ** 2 + (n / b) ** 2) * math.sqrt(D / rho_h)
        for m in range(1, n_max)
        for n in range(1, n_max)
    ]
    return np.sort(f)[:count]


def _basis_1d(n_terms, n_quad=60):
    # xi^2 (1 - xi)^2 P_k(2 xi - 1) satisfies w = w' = 0 at both ends.
    x, wq = legendre.leggauss(n_quad)
    xi = 0.5 * (x + 1)
    bubble = np.polynomial.Polynomial([0, 0, 1, -2, 1])
    phi, d1, d2 = [], [], []
    for k in range(n_terms):
        c = np.zeros(k + 1)
        c[k] = 1
        leg = legendre.Legendre(c, domain=[0, 1]).convert(kind=np.polynomial.Polynomial)
        poly = bubble * leg
        phi.append(poly(xi))
        d1.append(poly.deriv(1)(xi))
        d2.append(poly.deriv(2)(xi))
    return np.array(phi), np.array(d1), np.array(d2), 0.5 * wq


def clamped_frequencies(a, b, D, nu, rho_h, count=5, n_terms=10):
    """Ritz estimate for the fully clamped isotropic rectangle (converges from above)."""
    p, p1, p2, wq = _basis_1d(n_terms)
    # 1D integrals on the unit interval
    I00 = (p * wq) @ p.T
    I22 = (p2 * wq) @ p2.T
    I20 = (p2 * wq) @ p.T
    I11 = (p1 * wq) @ p1.T
    # scale to physical lengths: d/dx = (1/a) d/dxi, dx = a dxi
    Mx, My = I00 * a, I00 * b
    K = D * (
        np.kron(I22 / a**3, My) + np.kron(Mx, I22 / b**3)
        + nu * (np.kron(I20 / a, I20.T / b) + np.kron(I20.T / a, I20 / b))
        + 2 * (1 - nu) * np.kron(I11 / a, I11 / b)
    )
    M = rho_h * np.kron(Mx, My)
    vals = eigh(K, M, eigvals_only=True)
    return np.sqrt(vals[:count]) / (2 * math.pi)
