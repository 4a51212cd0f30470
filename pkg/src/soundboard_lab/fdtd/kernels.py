"""Leapfrog time-stepping kernels for the plate + bar system.

Both backends advance the same state in place and share one argument list:

plate (padded 2D arrays)
    w, v         displacement and velocity
    minv         1/mass at free nodes, 0 elsewhere (pins fixed nodes)
    dxx, dyy     x/y bending rigidity over dx^2 at free nodes
    dnu          Poisson coupling rigidity over dx^2 at free nodes
    dtw          4 * twist rigidity over dx^2 on cells (lower-left corner index)
    kd           clamped-rim mirror stiffness (diagonal)
    fext         constant external force
bars (1D arrays over concatenated bar nodes)
    bu, bv, bminv, bfext
    kap_i, kap_c, kap_w   three-point curvature stencils and EI*ds weights
coupling
    cp_j, cp_i, cb, ck    plate node, bar node, penalty stiffness
excitation
    exc_kind (0 none, 1 plate, 2 bar), exc_a, exc_b, exc_series (force per substep)
probes
    probe_kind (1 plate, 2 bar), probe_a, probe_b; out[step, probe] gets displacement

Returns ``(status, step, a, b)``; status 1 flags a non-finite or runaway
value at plate node (a, b) or bar node a (b = -1).
"""
import numpy as np

from .._backend import HAS_NUMBA

if HAS_NUMBA:
    from numba import njit
else:  # pragma: no cover

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(nogil=True, fastmath=False, cache=True)
def _bar_forces(bu, bfext, kap_i, kap_c, kap_w, fb):
    for k in range(bu.shape[0]):
        fb[k] = bfext[k]
    for c in range(kap_w.shape[0]):
        i0 = kap_i[c, 0]
        i1 = kap_i[c, 1]
        i2 = kap_i[c, 2]
        m = kap_w[c] * (kap_c[c, 0] * bu[i0] + kap_c[c, 1] * bu[i1] + kap_c[c, 2] * bu[i2])
        fb[i0] -= m * kap_c[c, 0]
        fb[i1] -= m * kap_c[c, 1]
        fb[i2] -= m * kap_c[c, 2]


@njit(nogil=True, fastmath=False, cache=True)
def run_numba(w, v, minv, dxx, dyy, dnu, dtw, kd, fext,
              bu, bv, bminv, bfext, kap_i, kap_c, kap_w,
              cp_j, cp_i, cb, ck,
              exc_kind, exc_a, exc_b, exc_series,
              probe_kind, probe_a, probe_b,
              dt, gamma, n_steps, substeps, out, check_every, limit, debug):
    ny, nx = w.shape
    mx = np.zeros_like(w)
    my = np.zeros_like(w)
    mt = np.zeros_like(w)
    fc = np.zeros_like(w)
    seen = np.zeros(w.shape, dtype=np.bool_)
    nb = bu.shape[0]
    fb = np.zeros(nb)
    n_exc = exc_series.shape[0]
    sub = 0
    for step in range(n_steps):
        for _ in range(substeps):
            for j in range(1, ny - 1):
                for i in range(1, nx - 1):
                    c = w[j, i]
                    a = w[j, i + 1] + w[j, i - 1] - 2.0 * c
                    b = w[j + 1, i] + w[j - 1, i] - 2.0 * c
                    mx[j, i] = dxx[j, i] * a + dnu[j, i] * b
                    my[j, i] = dyy[j, i] * b + dnu[j, i] * a
                    mt[j, i] = dtw[j, i] * (w[j + 1, i + 1] - w[j + 1, i] - w[j, i + 1] + c)
            if nb > 0:
                _bar_forces(bu, bfext, kap_i, kap_c, kap_w, fb)
                bar_before = 0.0
                if debug:
                    for k in range(nb):
                        bar_before += fb[k]
                for p in range(ck.shape[0]):
                    s = ck[p] * (bu[cb[p]] - w[cp_j[p], cp_i[p]])
                    fc[cp_j[p], cp_i[p]] += s
                    fb[cb[p]] -= s
                if debug:
                    # plate total over distinct nodes must cancel the bar total
                    on_plate = 0.0
                    for p in range(ck.shape[0]):
                        jj = cp_j[p]
                        ii = cp_i[p]
                        if not seen[jj, ii]:
                            seen[jj, ii] = True
                            on_plate += fc[jj, ii]
                    for p in range(ck.shape[0]):
                        seen[cp_j[p], cp_i[p]] = False
                    on_bar = 0.0
                    for k in range(nb):
                        on_bar += fb[k]
                    on_bar -= bar_before
                    if abs(on_plate + on_bar) > 1e-9 * (abs(on_plate) + abs(on_bar)) + 1e-300:
                        raise AssertionError("coupling forces are not reciprocal")
            f_exc = 0.0
            if exc_kind > 0 and sub < n_exc:
                f_exc = exc_series[sub]
            if exc_kind == 1:
                fc[exc_a, exc_b] += f_exc
            elif exc_kind == 2:
                fb[exc_a] += f_exc
            for j in range(2, ny - 2):
                for i in range(2, nx - 2):
                    mi = minv[j, i]
                    if mi == 0.0:
                        continue
                    f = (2.0 * mx[j, i] - mx[j, i + 1] - mx[j, i - 1]
                         + 2.0 * my[j, i] - my[j + 1, i] - my[j - 1, i]
                         - mt[j, i] + mt[j, i - 1] + mt[j - 1, i] - mt[j - 1, i - 1])
                    f = fext[j, i] + fc[j, i] + f - kd[j, i] * w[j, i]
                    vv = gamma * (v[j, i] + dt * mi * f)
                    v[j, i] = vv
                    w[j, i] += dt * vv
            if nb > 0:
                for p in range(ck.shape[0]):
                    fc[cp_j[p], cp_i[p]] = 0.0
                for k in range(nb):
                    bv[k] = gamma * (bv[k] + dt * bminv[k] * fb[k])
                    bu[k] += dt * bv[k]
            if exc_kind == 1:
                fc[exc_a, exc_b] = 0.0
            sub += 1
        for p in range(probe_kind.shape[0]):
            if probe_kind[p] == 1:
                out[step, p] = w[probe_a[p], probe_b[p]]
            else:
                out[step, p] = bu[probe_a[p]]
        if check_every > 0 and (step + 1) % check_every == 0:
            for j in range(ny):
                for i in range(nx):
                    x = w[j, i]
                    if not (abs(x) <= limit):
                        return 1, step, j, i
            for k in range(nb):
                if not (abs(bu[k]) <= limit):
                    return 1, step, k, -1
    return 0, n_steps, -1, -1


def run_numpy(w, v, minv, dxx, dyy, dnu, dtw, kd, fext,
              bu, bv, bminv, bfext, kap_i, kap_c, kap_w,
              cp_j, cp_i, cb, ck,
              exc_kind, exc_a, exc_b, exc_series,
              probe_kind, probe_a, probe_b,
              dt, gamma, n_steps, substeps, out, check_every, limit, debug):
    ny, nx = w.shape
    mx = np.zeros_like(w)
    my = np.zeros_like(w)
    mt = np.zeros_like(w)
    nb = bu.shape[0]
    n_exc = exc_series.shape[0]
    C = (slice(1, ny - 1), slice(1, nx - 1))
    I = (slice(2, ny - 2), slice(2, nx - 2))
    free = minv[I] != 0.0
    minv_i = minv[I]
    sub = 0
    for step in range(n_steps):
        for _ in range(substeps):
            c = w[C]
            a = w[1:-1, 2:] + w[1:-1, :-2] - 2.0 * c
            b = w[2:, 1:-1] + w[:-2, 1:-1] - 2.0 * c
            mx[C] = dxx[C] * a + dnu[C] * b
            my[C] = dyy[C] * b + dnu[C] * a
            mt[C] = dtw[C] * (w[2:, 2:] - w[2:, 1:-1] - w[1:-1, 2:] + c)
            f = (2.0 * mx[I] - mx[2:-2, 3:-1] - mx[2:-2, 1:-3]
                  + 2.0 * my[I] - my[3:-1, 2:-2] - my[1:-3, 2:-2]
                  - mt[I] + mt[2:-2, 1:-3] + mt[1:-3, 2:-2] - mt[1:-3, 1:-3])
            f += fext[I] - kd[I] * w[I]
            fb = None
            if nb > 0:
                idx = kap_i
                m = kap_w * np.einsum("ck,ck->c", kap_c, bu[idx])
                fb = bfext - np.bincount(idx.ravel(), weights=(m[:, None] * kap_c).ravel(), minlength=nb)
                s = ck * (bu[cb] - w[cp_j, cp_i])
                fplate = np.zeros_like(w)
                np.add.at(fplate, (cp_j, cp_i), s)
                fbar = np.bincount(cb, weights=s, minlength=nb)
                if debug and not np.isclose(fplate.sum(), fbar.sum(), rtol=1e-9, atol=1e-300):
                    raise AssertionError("coupling forces are not reciprocal")
                f += fplate[I]
                fb -= fbar
            if exc_kind > 0 and sub < n_exc:
                if exc_kind == 1:
                    f[exc_a - 2, exc_b - 2] += exc_series[sub]
                else:
                    fb[exc_a] += exc_series[sub]
            vv = np.where(free, gamma * (v[I] + dt * minv_i * f), 0.0)
            v[I] = vv
            w[I] += dt * vv
            if nb > 0:
                bv[:] = gamma * (bv + dt * bminv * fb)
                bu += dt * bv
            sub += 1
        for p in range(probe_kind.shape[0]):
            out[step, p] = w[probe_a[p], probe_b[p]] if probe_kind[p] == 1 else bu[probe_a[p]]
        if check_every > 0 and (step + 1) % check_every == 0:
            bad = ~(np.abs(w) <= limit)
            if bad.any():
                j, i = np.argwhere(bad)[0]
                return 1, step, int(j), int(i)
            badb = ~(np.abs(bu) <= limit)
            if badb.any():
                return 1, step, int(np.flatnonzero(badb)[0]), -1
    return 0, n_steps, -1, -1
