"""Sparse complex polynomials in several variables, keyed by exponent multi-index.

Used for kernel amplitudes, wave-packet phases/symbols, symbol calculus and the
Wick (Gaussian moment) evaluation behind the exact composition routines.  All
values are plain complex numbers; coefficients below DROP_TOL after arithmetic
are discarded.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

DROP_TOL = 0.0  # keep exact zeros only; callers may call .chop() explicitly


class Poly:
    """Polynomial sum_k c_k * x^k with k a length-`nvars` exponent tuple."""

    __slots__ = ("nvars", "coeffs")

    def __init__(self, nvars: int, coeffs: dict | None = None):
        self.nvars = int(nvars)
        self.coeffs = {}
        if coeffs:
            for k, c in coeffs.items():
                k = tuple(int(e) for e in k)
                if len(k) != self.nvars:
                    raise ValueError(f"exponent {k} has wrong length for nvars={nvars}")
                c = complex(c)
                if c != 0:
                    self.coeffs[k] = self.coeffs.get(k, 0.0) + c

    # -- constructors ------------------------------------------------------

    @staticmethod
    def constant(nvars: int, value: complex) -> "Poly":
        return Poly(nvars, {(0,) * nvars: value} if value != 0 else {})

    @staticmethod
    def variable(nvars: int, i: int) -> "Poly":
        e = [0] * nvars
        e[i] = 1
        return Poly(nvars, {tuple(e): 1.0})

    @staticmethod
    def affine(nvars: int, linear, const: complex = 0.0) -> "Poly":
        """const + sum_i linear[i] * x_i."""
        coeffs = {}
        if const != 0:
            coeffs[(0,) * nvars] = complex(const)
        for i, c in enumerate(linear):
            if c != 0:
                e = [0] * nvars
                e[i] = 1
                coeffs[tuple(e)] = complex(c)
        return Poly(nvars, coeffs)

    @staticmethod
    def quadratic_form(nvars: int, M) -> "Poly":
        """(1/2) x^T M x for a square matrix M (symmetrized)."""
        M = np.asarray(M, dtype=complex)
        n = M.shape[0]
        out = {}
        for i in range(n):
            for j in range(n):
                c = 0.5 * M[i, j]
                if c == 0:
                    continue
                e = [0] * nvars
                e[i] += 1
                e[j] += 1
                k = tuple(e)
                out[k] = out.get(k, 0.0) + c
        return Poly(nvars, out)

    def copy(self) -> "Poly":
        p = Poly(self.nvars)
        p.coeffs = dict(self.coeffs)
        return p

    # -- basic arithmetic ---------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(self.nvars, other)
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, 0.0) + c
        return Poly(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.nvars, {k: -c for k, c in self.coeffs.items()})

    def __sub__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(self.nvars, other)
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return Poly(self.nvars, {k: c * other for k, c in self.coeffs.items()})
        out = {}
        for k1, c1 in self.coeffs.items():
            for k2, c2 in other.coeffs.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                out[k] = out.get(k, 0.0) + c1 * c2
        return Poly(self.nvars, out)

    __rmul__ = __mul__

    def conjugate(self) -> "Poly":
        return Poly(self.nvars, {k: np.conj(c) for k, c in self.coeffs.items()})

    def chop(self, tol: float = 1e-14) -> "Poly":
        scale = max((abs(c) for c in self.coeffs.values()), default=0.0)
        if scale == 0.0:
            return Poly(self.nvars)
        return Poly(self.nvars, {k: c for k, c in self.coeffs.items() if abs(c) > tol * scale})

    # -- calculus ------------------------------------------------------------

    def diff(self, i: int) -> "Poly":
        out = {}
        for k, c in self.coeffs.items():
            if k[i] == 0:
                continue
            e = list(k)
            e[i] -= 1
            out[tuple(e)] = out.get(tuple(e), 0.0) + c * k[i]
        return Poly(self.nvars, out)

    def gradient(self):
        return [self.diff(i) for i in range(self.nvars)]

    def degree(self) -> int:
        return max((sum(k) for k in self.coeffs), default=0)

    def __call__(self, x) -> complex:
        x = np.asarray(x, dtype=complex)
        total = 0.0 + 0.0j
        for k, c in self.coeffs.items():
            term = c
            for xi, e in zip(x, k):
                if e:
                    term = term * xi**e
            total += term
        return total

    # -- substitution ---------------------------------------------------------

    def subs_affine(self, T, t, new_nvars: int) -> "Poly":
        """Substitute x_i -> t_i + sum_j T[i, j] y_j; returns Poly in y."""
        T = np.asarray(T, dtype=complex)
        t = np.asarray(t, dtype=complex)
        forms = [Poly.affine(new_nvars, T[i], t[i]) for i in range(self.nvars)]
        pow_cache: list[dict[int, Poly]] = [{0: Poly.constant(new_nvars, 1.0)} for _ in forms]

        def power(i, e):
            cache = pow_cache[i]
            if e not in cache:
                cache[e] = power(i, e - 1) * forms[i]
            return cache[e]

        out = Poly(new_nvars)
        for k, c in self.coeffs.items():
            term = Poly.constant(new_nvars, c)
            for i, e in enumerate(k):
                if e:
                    term = term * power(i, e)
            out = out + term
        return out

    def promote(self, new_nvars: int, offset: int) -> "Poly":
        """Reinterpret in a larger variable set, shifting all indices by `offset`."""
        out = {}
        for k, c in self.coeffs.items():
            e = [0] * new_nvars
            for i, ki in enumerate(k):
                e[offset + i] = ki
            out[tuple(e)] = c
        return Poly(new_nvars, out)

    def truncate_degree(self, maxdeg: int) -> "Poly":
        return Poly(self.nvars, {k: c for k, c in self.coeffs.items() if sum(k) <= maxdeg})

    # -- serialization ---------------------------------------------------------

    def to_jsonable(self) -> dict:
        terms = [
            {"exp": list(k), "re": float(c.real), "im": float(c.imag)}
            for k, c in sorted(self.coeffs.items())
        ]
        return {"nvars": self.nvars, "terms": terms}

    @staticmethod
    def from_jsonable(obj: dict) -> "Poly":
        coeffs = {tuple(t["exp"]): complex(t.get("re", 0.0), t.get("im", 0.0)) for t in obj["terms"]}
        return Poly(int(obj["nvars"]), coeffs)

    def __repr__(self):
        return f"Poly(nvars={self.nvars}, nterms={len(self.coeffs)})"


# -- Gaussian (Wick) moments ---------------------------------------------------


def _moment(nu: tuple, cov: tuple) -> complex:
    """E[x^nu] for a zero-mean Gaussian with (complex symmetric) covariance."""
    return _moment_cached(nu, cov)


@lru_cache(maxsize=200_000)
def _moment_cached(nu: tuple, cov: tuple) -> complex:
    total_deg = sum(nu)
    if total_deg == 0:
        return 1.0
    if total_deg % 2 == 1:
        return 0.0
    i = next(j for j, e in enumerate(nu) if e > 0)
    mu = list(nu)
    mu[i] -= 1
    n = len(nu)
    acc = 0.0 + 0.0j
    for j in range(n):
        if mu[j] == 0:
            continue
        rest = list(mu)
        rest[j] -= 1
        acc += cov[i * n + j] * mu[j] * _moment_cached(tuple(rest), cov)
    return acc


def gaussian_expectation(p: Poly, Sigma) -> complex:
    """E[p(x)] for zero-mean Gaussian x with covariance matrix Sigma (full poly)."""
    Sigma = np.asarray(Sigma, dtype=complex)
    cov = tuple(Sigma.ravel())
    return sum(c * _moment(k, cov) for k, c in p.coeffs.items())


def expect_tail(p: Poly, nhead: int, Sigma) -> Poly:
    """Integrate out the trailing variables of `p` against a Gaussian.

    `p` lives on (y, z) with y the first `nhead` variables; z is zero-mean
    Gaussian with covariance `Sigma`.  Returns E_z[p(y, z)] as a Poly in y.
    """
    Sigma = np.asarray(Sigma, dtype=complex)
    cov = tuple(Sigma.ravel())
    out = {}
    for k, c in p.coeffs.items():
        khead, ktail = k[:nhead], k[nhead:]
        m = _moment(ktail, cov)
        if m == 0:
            continue
        out[khead] = out.get(khead, 0.0) + c * m
    return Poly(nhead, out)


def poly_allclose(p: Poly, q: Poly, tol: float = 1e-12) -> bool:
    """Coefficient-wise comparison relative to the larger coefficient scale."""
    scale = max(
        max((abs(c) for c in p.coeffs.values()), default=0.0),
        max((abs(c) for c in q.coeffs.values()), default=0.0),
        1e-300,
    )
    keys = set(p.coeffs) | set(q.coeffs)
    return all(abs(p.coeffs.get(k, 0.0) - q.coeffs.get(k, 0.0)) <= tol * scale for k in keys)


def poly_maxdiff(p: Poly, q: Poly) -> float:
    keys = set(p.coeffs) | set(q.coeffs)
    return max((abs(p.coeffs.get(k, 0.0) - q.coeffs.get(k, 0.0)) for k in keys), default=0.0)


def multi_factorial(nu) -> float:
    out = 1.0
    for e in nu:
        out *= math.factorial(e)
    return out
