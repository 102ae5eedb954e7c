"""Hot quadrature loops: numba-jitted kernels with a pure-numpy fallback.

Set the environment variable PHASELAB_NO_NUMBA=1 to force the numpy path
(same results; the summation order per output point is fixed in both paths,
so outputs are independent of the parallel schedule).

Both implementations compute, for each output point a,

    out[a] = pref * sum_q w_q  e^{i phi(a, b_q)/h}  amp(a, b_q)  f(b_q),

with phi either a general quadratic form on (a, b) or the closed-form
disk-model (Fubini-Study) phase, and amp either a sparse polynomial in (a, b)
or the closed-form leading disk amplitude 2 (1 + z_a conj(z_b))^{-2}.
A positive `window` restricts to max_k |a_k - b_k| <= window (square window).
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("PHASELAB_NO_NUMBA", "") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        import numba
        from numba import njit, prange
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if not USE_NUMBA:  # identity decorators so the jitted source still imports
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap

    def prange(*args):
        return range(*args)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def _poly_eval(w, exps, coeffs):
    total = 0.0 + 0.0j
    for t in range(exps.shape[0]):
        term = coeffs[t]
        for k in range(exps.shape[1]):
            e = exps[t, k]
            for _ in range(e):
                term *= w[k]
        total += term
    return total


@njit(parallel=True, cache=True)
def _apply_quadratic_numba(out_pts, in_pts, fvals, weights, H, lin, const, h, pref,
                           amp_exps, amp_coeffs, window):
    P = out_pts.shape[0]
    Q = in_pts.shape[0]
    da = out_pts.shape[1]
    db = in_pts.shape[1]
    nv = da + db
    const_amp = amp_exps.shape[0] == 1 and amp_exps.sum() == 0
    amp0 = amp_coeffs[0] if const_amp else 0.0 + 0.0j
    # b-side pieces, computed once
    phi_b = np.empty(Q, dtype=np.complex128)
    for q in range(Q):
        acc = 0.0 + 0.0j
        for i in range(db):
            acc += lin[da + i] * in_pts[q, i]
            row = 0.0 + 0.0j
            for j in range(db):
                row += H[da + i, da + j] * in_pts[q, j]
            acc += 0.5 * in_pts[q, i] * row
        phi_b[q] = acc
    out = np.zeros(P, dtype=np.complex128)
    for p in prange(P):
        w = np.empty(nv, dtype=np.complex128)
        v = np.empty(db, dtype=np.complex128)
        for k in range(da):
            w[k] = out_pts[p, k]
        phi_a = const
        for i in range(da):
            phi_a += lin[i] * out_pts[p, i]
            row = 0.0 + 0.0j
            for j in range(da):
                row += H[i, j] * out_pts[p, j]
            phi_a += 0.5 * out_pts[p, i] * row
        for i in range(db):
            acc = 0.0 + 0.0j
            for j in range(da):
                acc += H[j, da + i] * out_pts[p, j]
            v[i] = acc
        total = 0.0 + 0.0j
        for q in range(Q):
            if window > 0.0 and da == db:
                far = False
                for k in range(da):
                    if abs(out_pts[p, k] - in_pts[q, k]) > window:
                        far = True
                        break
                if far:
                    continue
            phi = phi_a + phi_b[q]
            for k in range(db):
                phi += v[k] * in_pts[q, k]
            if const_amp:
                amp = amp0
            else:
                for k in range(db):
                    w[da + k] = in_pts[q, k]
                amp = _poly_eval(w, amp_exps, amp_coeffs)
            total += weights[q] * np.exp(1j * phi / h) * amp * fvals[q]
        out[p] = pref * total
    return out


@njit(parallel=True, cache=True)
def _apply_fs_numba(out_pts, in_pts, fvals, weights, h, pref, amp_mode, amp_shift,
                    amp_exps, amp_coeffs, window):
    P = out_pts.shape[0]
    Q = in_pts.shape[0]
    out = np.zeros(P, dtype=np.complex128)
    for p in prange(P):
        ax = out_pts[p, 0]
        ay = out_pts[p, 1]
        za = ax + 1j * ay
        la = np.log(1.0 + ax * ax + ay * ay)
        acc = 0.0 + 0.0j
        w = np.empty(4, dtype=np.complex128)
        w[0] = ax
        w[1] = ay
        for q in range(Q):
            bx = in_pts[q, 0]
            by = in_pts[q, 1]
            if window > 0.0:
                if abs(ax - bx) > window or abs(ay - by) > window:
                    continue
            zbc = bx - 1j * by
            lb = np.log(1.0 + bx * bx + by * by)
            cross = 1.0 + za * zbc
            phi = 1j * (0.5 * la + 0.5 * lb - np.log(cross))
            if amp_mode == 0:
                amp = 2.0 / (cross * cross) + amp_shift
            elif amp_mode == 2:
                mid2 = 0.25 * ((ax + bx) ** 2 + (ay + by) ** 2)
                amp = 2.0 / ((1.0 + mid2) * (1.0 + mid2)) + amp_shift
            else:
                amp = amp_shift
            if amp_exps.shape[0] > 0:
                w[2] = bx
                w[3] = by
                amp = amp + _poly_eval(w, amp_exps, amp_coeffs)
            acc += weights[q] * np.exp(1j * phi / h) * amp * fvals[q]
        out[p] = pref * acc
    return out


# ---------------------------------------------------------------------------
# numpy fallback (and reference implementation)
# ---------------------------------------------------------------------------


def _apply_quadratic_numpy(out_pts, in_pts, fvals, weights, H, lin, const, h, pref,
                           amp_exps, amp_coeffs, window):
    P, da = out_pts.shape
    Q, db = in_pts.shape
    nv = da + db
    out = np.zeros(P, dtype=np.complex128)
    # b-only pieces, computed once
    Hbb = H[da:, da:]
    phi_b = (in_pts @ lin[da:]) + 0.5 * np.einsum("qi,ij,qj->q", in_pts, Hbb, in_pts)
    for p in range(P):
        a = out_pts[p]
        if window > 0.0 and da == db:
            mask = np.all(np.abs(in_pts - a[None, :]) <= window, axis=1)
        else:
            mask = slice(None)
        b = in_pts[mask]
        phi = (const + lin[:da] @ a + 0.5 * a @ H[:da, :da] @ a
               + b @ (H[:da, da:].T @ a) + phi_b[mask])
        w = np.concatenate([np.broadcast_to(a, (b.shape[0], da)), b], axis=1).astype(
            np.complex128)
        amp = np.zeros(b.shape[0], dtype=np.complex128)
        for t in range(amp_exps.shape[0]):
            amp += amp_coeffs[t] * np.prod(w ** amp_exps[t][None, :], axis=1)
        out[p] = pref * np.sum(weights[mask] * np.exp(1j * phi / h) * amp * fvals[mask])
    return out


def _apply_fs_numpy(out_pts, in_pts, fvals, weights, h, pref, amp_mode, amp_shift,
                    amp_exps, amp_coeffs, window):
    P = out_pts.shape[0]
    out = np.zeros(P, dtype=np.complex128)
    bx, by = in_pts[:, 0], in_pts[:, 1]
    lb = np.log(1.0 + bx**2 + by**2)
    zbc = bx - 1j * by
    for p in range(P):
        ax, ay = out_pts[p]
        if window > 0.0:
            idx = np.nonzero((np.abs(ax - bx) <= window) & (np.abs(ay - by) <= window))[0]
        else:
            idx = np.arange(bx.size)
        za = ax + 1j * ay
        cross = 1.0 + za * zbc[idx]
        phi = 1j * (0.5 * np.log(1.0 + ax**2 + ay**2) + 0.5 * lb[idx] - np.log(cross))
        if amp_mode == 0:
            amp = 2.0 / (cross * cross) + amp_shift
        elif amp_mode == 2:
            mid2 = 0.25 * ((ax + bx[idx]) ** 2 + (ay + by[idx]) ** 2)
            amp = 2.0 / ((1.0 + mid2) ** 2) + amp_shift
        else:
            amp = np.full(idx.size, amp_shift, dtype=np.complex128)
        if amp_exps.shape[0] > 0:
            w = np.column_stack([np.full(idx.size, ax), np.full(idx.size, ay),
                                 bx[idx], by[idx]]).astype(np.complex128)
            extra = np.zeros(idx.size, dtype=np.complex128)
            for t in range(amp_exps.shape[0]):
                extra += amp_coeffs[t] * np.prod(w ** amp_exps[t][None, :], axis=1)
            amp = amp + extra
        out[p] = pref * np.sum(weights[idx] * np.exp(1j * phi / h) * amp * fvals[idx])
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def apply_quadratic(*args, force_numpy: bool = False):
    if USE_NUMBA and not force_numpy:
        return _apply_quadratic_numba(*args)
    return _apply_quadratic_numpy(*args)


def apply_fs(*args, force_numpy: bool = False):
    if USE_NUMBA and not force_numpy:
        return _apply_fs_numba(*args)
    return _apply_fs_numpy(*args)
