"""Two-point phase functions: quadratic and analytic backends, diagonal jets,
gauge normalization, and the builtin model phases.

Conventions used throughout the package:

* points live in R^(2n) with real coordinates ordered (x_1, y_1, ..., x_n, y_n),
  identified with C^n through z_j = x_j + i y_j;
* a phase is a map phi(alpha, beta) vanishing on the diagonal, evaluated with
  full complex arguments (holomorphic extension in every real coordinate);
* gradients are returned as 1-d arrays of d/d(alpha_i); Hessian blocks follow
  the same index order, with the mixed block B[i, j] = d^2 phi / d alpha_i d beta_j.

All objects are immutable after construction and all operations are pure
functions, so concurrent use from several threads is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement
from typing import Any

import numpy as np
from scipy.linalg import expm

from ._poly import Poly
from .errors import BranchError, DomainError, SpecFormatError

DIAG_TOL = 1e-12
REALNESS_TOL = 1e-10

# minimum |1 + z*conj(w)| before the Fubini-Study log branch is declared lost
FS_BRANCH_FLOOR = 0.1


# ---------------------------------------------------------------------------
# domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    """Box of validity (per-coordinate half-width) plus complexification radius."""

    box: np.ndarray
    rho: float

    def check(self, *points):
        for p in points:
            p = np.asarray(p, dtype=complex)
            if np.any(np.abs(p.real) > self.box + 1e-9):
                raise DomainError(f"real part {p.real} outside domain box {self.box}")
            if np.any(np.abs(p.imag) > self.rho + 1e-9):
                raise DomainError(
                    f"imaginary part {p.imag} exceeds complexification radius {self.rho}"
                )


def _default_domain(m: int, half_width: float = 100.0, rho: float = 100.0) -> Domain:
    return Domain(box=np.full(m, float(half_width)), rho=float(rho))


# ---------------------------------------------------------------------------
# diagonal jets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagonalJet:
    """Taylor coefficients of (u, v) -> phi(alpha0 + u, alpha0 + v).

    Keys of `coeffs` are pairs (nu_u, nu_v) of exponent tuples; the value is
    the Taylor coefficient (derivative divided by nu_u! nu_v!), so that

        phi(alpha0 + u, alpha0 + v) = sum coeffs[(nu_u, nu_v)] u^nu_u v^nu_v.
    """

    basepoint: np.ndarray
    order: int
    coeffs: dict

    @property
    def m(self) -> int:
        return len(self.basepoint)

    def coefficient(self, nu_u, nu_v) -> complex:
        return self.coeffs.get((tuple(nu_u), tuple(nu_v)), 0.0 + 0.0j)

    # first-order data ------------------------------------------------------

    def grad_alpha(self) -> np.ndarray:
        m = self.m
        return np.array([self.coefficient(_unit(m, i), (0,) * m) for i in range(m)])

    def grad_beta(self) -> np.ndarray:
        m = self.m
        return np.array([self.coefficient((0,) * m, _unit(m, i)) for i in range(m)])

    def theta(self) -> np.ndarray:
        """The diagonal 1-form d_alpha phi|_{beta=alpha} (real for valid phases)."""
        return self.grad_alpha()

    # second-order blocks ----------------------------------------------------

    def A(self) -> np.ndarray:
        return self._second_block("uu")

    def B(self) -> np.ndarray:
        m = self.m
        out = np.zeros((m, m), dtype=complex)
        for i in range(m):
            for j in range(m):
                out[i, j] = self.coefficient(_unit(m, i), _unit(m, j))
        return out

    def C(self) -> np.ndarray:
        return self._second_block("vv")

    def _second_block(self, which: str) -> np.ndarray:
        m = self.m
        zero = (0,) * m
        out = np.zeros((m, m), dtype=complex)
        for i in range(m):
            for j in range(i, m):
                e = list(zero)
                e[i] += 1
                e[j] += 1
                key = (tuple(e), zero) if which == "uu" else (zero, tuple(e))
                c = self.coeffs.get(key, 0.0)
                if i == j:
                    out[i, i] = 2.0 * c
                else:
                    out[i, j] = out[j, i] = c
        return out

    # invariant residuals ------------------------------------------------------

    def diagonal_residual(self) -> float:
        """Max |coefficient sum| of the restriction to u = v (must vanish)."""
        sums: dict = {}
        for (nu_u, nu_v), c in self.coeffs.items():
            k = tuple(a + b for a, b in zip(nu_u, nu_v))
            sums[k] = sums.get(k, 0.0) + c
        return max((abs(s) for s in sums.values()), default=0.0)

    def validate(self):
        zero = ((0,) * self.m, (0,) * self.m)
        if abs(self.coeffs.get(zero, 0.0)) > DIAG_TOL:
            raise ValueError("jet has nonzero constant coefficient")
        if self.diagonal_residual() > 1e-10 * max(_jet_scale(self), 1.0):
            raise ValueError("jet does not vanish on the diagonal")
        return self


def _jet_scale(jet: DiagonalJet) -> float:
    return max((abs(c) for c in jet.coeffs.values()), default=1.0)


def _unit(m: int, i: int) -> tuple:
    e = [0] * m
    e[i] = 1
    return tuple(e)


def jet_from_blocks(basepoint, ga, gb, A, B, C, order: int = 2) -> DiagonalJet:
    """Assemble an order-2 jet from gradients and Hessian blocks."""
    basepoint = np.asarray(basepoint, dtype=float)
    m = len(basepoint)
    zero = (0,) * m
    coeffs = {}
    for i in range(m):
        if ga[i] != 0:
            coeffs[(_unit(m, i), zero)] = complex(ga[i])
        if gb[i] != 0:
            coeffs[(zero, _unit(m, i))] = complex(gb[i])
    for i in range(m):
        for j in range(i, m):
            e = list(zero)
            e[i] += 1
            e[j] += 1
            e = tuple(e)
            fac = 0.5 if i == j else 1.0
            if A[i, j] != 0:
                coeffs[(e, zero)] = fac * complex(A[i, j])
            if C[i, j] != 0:
                coeffs[(zero, e)] = fac * complex(C[i, j])
    for i in range(m):
        for j in range(m):
            if B[i, j] != 0:
                coeffs[(_unit(m, i), _unit(m, j))] = complex(B[i, j])
    return DiagonalJet(basepoint=basepoint, order=order, coeffs=coeffs)


# ---------------------------------------------------------------------------
# quadratic phases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticPhase:
    """phi(alpha, beta) = theta.(u - v) + u.A.u/2 + u.B.v + v.C.v/2,
    with u = alpha - alpha0, v = beta - alpha0."""

    n: int
    alpha0: np.ndarray
    theta: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        m = 2 * self.n
        for name in ("A", "B", "C"):
            M = np.asarray(getattr(self, name), dtype=complex)
            if M.shape != (m, m):
                raise ValueError(f"{name} must be {m}x{m}")
            object.__setattr__(self, name, M)
        object.__setattr__(self, "alpha0", np.asarray(self.alpha0, dtype=float))
        theta = np.asarray(self.theta)
        if np.max(np.abs(np.imag(theta))) > REALNESS_TOL:
            raise ValueError("theta must be real")
        object.__setattr__(self, "theta", np.real(theta).astype(float))
        scale = max(np.max(np.abs(self.A)), np.max(np.abs(self.B)), np.max(np.abs(self.C)), 1.0)
        if np.max(np.abs(self.A - self.A.T)) > 1e-12 * scale:
            raise ValueError("A must be symmetric")
        if np.max(np.abs(self.C - self.C.T)) > 1e-12 * scale:
            raise ValueError("C must be symmetric")
        if np.max(np.abs(self.A + self.B + self.B.T + self.C)) > 1e-10 * scale:
            raise ValueError("A + B + B^T + C must vanish")
        D = 0.5j * (self.B + self.B.T)
        if np.min(np.linalg.eigvalsh(0.5 * (D + D.conj().T).real.astype(float))) <= 0:
            raise ValueError("Re D must be positive definite")

    @property
    def m(self) -> int:
        return 2 * self.n

    def value(self, a, b) -> complex:
        u = np.asarray(a, dtype=complex) - self.alpha0
        v = np.asarray(b, dtype=complex) - self.alpha0
        return complex(
            self.theta @ (u - v) + 0.5 * u @ self.A @ u + u @ self.B @ v + 0.5 * v @ self.C @ v
        )

    def grads(self, a, b):
        u = np.asarray(a, dtype=complex) - self.alpha0
        v = np.asarray(b, dtype=complex) - self.alpha0
        return self.theta + self.A @ u + self.B @ v, -self.theta + self.B.T @ u + self.C @ v

    def hessians(self, a, b):
        return self.A, self.B, self.C


def quadratic_from_jet(jet: DiagonalJet, n: int) -> QuadraticPhase:
    theta = jet.grad_alpha()
    return QuadraticPhase(
        n=n, alpha0=jet.basepoint, theta=np.real(theta), A=jet.A(), B=jet.B(), C=jet.C()
    )


@dataclass(frozen=True)
class GaugeTerm:
    """Quadratic coboundary f at jet level: f(alpha0 + u) = value + grad.u + u.H.u/2."""

    basepoint: np.ndarray
    value: float = 0.0
    grad: np.ndarray | None = None
    hessian: np.ndarray | None = None

    def is_zero(self, tol: float = 1e-13) -> bool:
        g = 0.0 if self.grad is None else np.max(np.abs(self.grad))
        h = 0.0 if self.hessian is None else np.max(np.abs(self.hessian))
        return abs(self.value) <= tol and g <= tol and h <= tol


# ---------------------------------------------------------------------------
# Fubini-Study backend
# ---------------------------------------------------------------------------


class _FubiniStudy:
    """phi(z, w) = i [ log(1+z zbar)/2 + log(1+w wbar)/2 - log(1+z wbar) ] on C^1,
    holomorphically extended by treating z and zbar as independent variables."""

    n = 1

    @staticmethod
    def _split(p):
        # z = x + i y and its antiholomorphic partner zeta = x - i y,
        # with x, y allowed complex.
        p = np.asarray(p, dtype=complex)
        return p[0] + 1j * p[1], p[0] - 1j * p[1]

    @classmethod
    def _logs(cls, a, b):
        z, zeta = cls._split(a)
        w, xi = cls._split(b)
        for val, label in (((1 + z * zeta), "1+z*zbar"), ((1 + w * xi), "1+w*wbar"),
                           ((1 + z * xi), "1+z*wbar")):
            if abs(val) < FS_BRANCH_FLOOR:
                raise BranchError(f"Fubini-Study log branch failure: |{label}| = {abs(val):.3g}")
        return z, zeta, w, xi

    def value(self, a, b) -> complex:
        z, zeta, w, xi = self._logs(a, b)
        return complex(
            1j * (0.5 * np.log(1 + z * zeta) + 0.5 * np.log(1 + w * xi) - np.log(1 + z * xi))
        )

    def grads(self, a, b):
        z, zeta, w, xi = self._logs(a, b)
        pz = 1j * (0.5 * zeta / (1 + z * zeta) - xi / (1 + z * xi))
        pzeta = 1j * (0.5 * z / (1 + z * zeta))
        pw = 1j * (0.5 * xi / (1 + w * xi))
        pxi = 1j * (0.5 * w / (1 + w * xi) - z / (1 + z * xi))
        ga = np.array([pz + pzeta, 1j * (pz - pzeta)])
        gb = np.array([pw + pxi, 1j * (pw - pxi)])
        return ga, gb

    def hessians(self, a, b):
        z, zeta, w, xi = self._logs(a, b)
        d1 = (1 + z * zeta) ** 2
        d2 = (1 + w * xi) ** 2
        d12 = (1 + z * xi) ** 2
        # holomorphic-coordinate blocks
        H_aa = np.array([[1j * (-0.5 * zeta**2 / d1 + xi**2 / d12), 0.5j / d1],
                         [0.5j / d1, -0.5j * z**2 / d1]])
        H_bb = np.array([[-0.5j * xi**2 / d2, 0.5j / d2],
                         [0.5j / d2, 1j * (-0.5 * w**2 / d2 + z**2 / d12)]])
        H_ab = np.array([[0.0, -1j / d12], [0.0, 0.0]])
        M = np.array([[1.0, 1j], [1.0, -1j]])  # rows (z, zeta), cols (x, y)
        return M.T @ H_aa @ M, M.T @ H_ab @ M, M.T @ H_bb @ M


# ---------------------------------------------------------------------------
# polynomial backend
# ---------------------------------------------------------------------------


class _PolynomialPhase:
    """phi given by a Poly in the 2m variables (alpha_1..alpha_m, beta_1..beta_m)."""

    def __init__(self, m: int, poly: Poly):
        if poly.nvars != 2 * m:
            raise ValueError("polynomial must have 2m variables")
        self.m = m
        self.poly = poly
        self._grads = [poly.diff(i) for i in range(2 * m)]
        self._hess = [[self._grads[i].diff(j) for j in range(2 * m)] for i in range(2 * m)]

    def value(self, a, b) -> complex:
        return self.poly(np.concatenate([np.asarray(a, complex), np.asarray(b, complex)]))

    def grads(self, a, b):
        x = np.concatenate([np.asarray(a, complex), np.asarray(b, complex)])
        g = np.array([gi(x) for gi in self._grads])
        return g[: self.m], g[self.m :]

    def hessians(self, a, b):
        x = np.concatenate([np.asarray(a, complex), np.asarray(b, complex)])
        m = self.m
        H = np.array([[self._hess[i][j](x) for j in range(2 * m)] for i in range(2 * m)])
        return H[:m, :m], H[:m, m:], H[m:, m:]


# ---------------------------------------------------------------------------
# PhaseFunction front-end
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseFunction:
    """Uniform front-end over the quadratic / builtin / polynomial backends."""

    kind: str
    dim: int
    backend: Any
    domain: Domain
    self_adjoint: bool = False
    label: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.dim // 2

    def value(self, a, b) -> complex:
        self.domain.check(a, b)
        return self.backend.value(a, b)

    def grads(self, a, b):
        self.domain.check(a, b)
        return self.backend.grads(a, b)

    def hessians(self, a, b):
        self.domain.check(a, b)
        return self.backend.hessians(a, b)


@dataclass(frozen=True)
class PhaseEval:
    value: complex
    grad_alpha: np.ndarray | None = None
    grad_beta: np.ndarray | None = None
    hess_aa: np.ndarray | None = None
    hess_ab: np.ndarray | None = None
    hess_bb: np.ndarray | None = None


def eval_phase(phase: PhaseFunction, alpha, beta, deriv_order: int = 0) -> PhaseEval:
    """Evaluate phi and its requested derivative tensors at (alpha, beta).

    Derivatives are exact for the quadratic and polynomial backends and
    closed-form for the builtin transcendental models.
    """
    if deriv_order not in (0, 1, 2):
        raise ValueError("deriv_order must be 0, 1 or 2")
    val = phase.value(alpha, beta)
    if deriv_order == 0:
        return PhaseEval(value=val)
    ga, gb = phase.grads(alpha, beta)
    if deriv_order == 1:
        return PhaseEval(value=val, grad_alpha=ga, grad_beta=gb)
    A, B, C = phase.hessians(alpha, beta)
    return PhaseEval(value=val, grad_alpha=ga, grad_beta=gb, hess_aa=A, hess_ab=B, hess_bb=C)


def jet_at(phase: PhaseFunction, alpha0, order: int = 2) -> DiagonalJet:
    """Diagonal jet of the phase at alpha0.

    Exact for the quadratic and polynomial backends (any order); closed-form
    through order 2 for builtin models, least-squares finite-difference fit
    for orders 3 and 4.
    """
    alpha0 = np.asarray(alpha0, dtype=float)
    phase.domain.check(alpha0)
    if phase.kind == "polynomial":
        return _jet_polynomial(phase, alpha0, order)
    if order <= 2 or phase.kind == "quadratic":
        ev = eval_phase(phase, alpha0, alpha0, deriv_order=2)
        jet = jet_from_blocks(alpha0, ev.grad_alpha, ev.grad_beta, ev.hess_aa, ev.hess_ab,
                              ev.hess_bb, order=order)
        if abs(ev.value) > 1e-10:
            raise ValueError(f"phase does not vanish at the diagonal point {alpha0}")
        return jet
    if order > 4:
        raise ValueError("finite-difference jets are limited to order <= 4")
    return _jet_fd_fit(phase, alpha0, order)


def _jet_polynomial(phase: PhaseFunction, alpha0, order: int) -> DiagonalJet:
    m = phase.dim
    backend: _PolynomialPhase = phase.backend
    T = np.eye(2 * m, dtype=complex)
    t = np.concatenate([alpha0, alpha0]).astype(complex)
    shifted = backend.poly.subs_affine(T, t, 2 * m).truncate_degree(order)
    coeffs = {}
    for k, c in shifted.coeffs.items():
        coeffs[(tuple(k[:m]), tuple(k[m:]))] = c
    zero = ((0,) * m, (0,) * m)
    if zero in coeffs and abs(coeffs[zero]) < 1e-12:
        del coeffs[zero]
    return DiagonalJet(basepoint=alpha0, order=order, coeffs=coeffs)


def _jet_fd_fit(phase: PhaseFunction, alpha0, order: int, delta: float = 0.04) -> DiagonalJet:
    # least-squares Taylor fit on a scattered stencil of radius ~delta
    m = phase.dim
    rng = np.random.default_rng(0)
    monos = [(ku, kv)
             for total in range(order + 1)
             for du in range(total + 1)
             for ku in _multi_indices(m, du)
             for kv in _multi_indices(m, total - du)]
    npts = 4 * len(monos)
    X = rng.uniform(-delta, delta, size=(npts, 2 * m))
    rows = np.zeros((npts, len(monos)))
    vals = np.zeros(npts, dtype=complex)
    for p in range(npts):
        u, v = X[p, :m], X[p, m:]
        vals[p] = phase.value(alpha0 + u, alpha0 + v)
        for q, (ku, kv) in enumerate(monos):
            rows[p, q] = np.prod(u ** np.array(ku)) * np.prod(v ** np.array(kv))
    sol, *_ = np.linalg.lstsq(rows, vals, rcond=None)
    coeffs = {}
    for q, (ku, kv) in enumerate(monos):
        if sum(ku) + sum(kv) == 0:
            continue
        if abs(sol[q]) > 1e-9:
            coeffs[(ku, kv)] = complex(sol[q])
    return DiagonalJet(basepoint=np.asarray(alpha0, float), order=order, coeffs=coeffs)


def _multi_indices(m: int, total: int):
    if total < 0:
        return
    if m == 1:
        yield (total,)
        return
    for combo in combinations_with_replacement(range(m), total):
        e = [0] * m
        for i in combo:
            e[i] += 1
        yield tuple(e)


def gauge_normalize(jet: DiagonalJet) -> tuple[DiagonalJet, GaugeTerm]:
    """Return the gauge-normalized jet (P = 0) and the removed quadratic term.

    The subtracted coboundary acts as phi -> phi - f(alpha) + f(beta) with
    f(alpha0 + u) = u.P.u / 2; R and D are untouched.
    """
    if jet.order < 2:
        raise ValueError("jet must have order >= 2")
    A, C = jet.A(), jet.C()
    P = 0.5 * (A - C)
    scale = max(np.max(np.abs(A)), np.max(np.abs(C)), 1.0)
    if np.max(np.abs(P.imag)) > 1e-10 * scale:
        raise ValueError("P = (A - C)/2 is not real: not a reproducing-phase jet")
    if np.max(np.abs(P - P.T)) > 1e-10 * scale:
        raise ValueError("P = (A - C)/2 is not symmetric")
    P = 0.5 * (P.real + P.real.T)
    m = jet.m
    zero = (0,) * m
    coeffs = dict(jet.coeffs)
    for i in range(m):
        for j in range(i, m):
            if P[i, j] == 0 and P[j, i] == 0:
                continue
            e = list(zero)
            e[i] += 1
            e[j] += 1
            e = tuple(e)
            fac = 0.5 if i == j else 1.0
            coeffs[(e, zero)] = coeffs.get((e, zero), 0.0) - fac * P[i, j]
            coeffs[(zero, e)] = coeffs.get((zero, e), 0.0) + fac * P[i, j]
    out = DiagonalJet(basepoint=jet.basepoint, order=jet.order, coeffs=coeffs)
    gauge = GaugeTerm(basepoint=jet.basepoint, hessian=P)
    return out, gauge


# ---------------------------------------------------------------------------
# builtin models
# ---------------------------------------------------------------------------


def _bargmann_blocks(n: int):
    blockB = np.array([[0.0, -1.0], [1.0, 0.0]]) - 1j * np.eye(2)
    B = np.zeros((2 * n, 2 * n), dtype=complex)
    for j in range(n):
        B[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = blockB
    A = 1j * np.eye(2 * n)
    return A, B, A.copy()


def make_bargmann(n: int) -> PhaseFunction:
    """Self-adjoint Gaussian model phase Im<z, conj(z')> + (i/2)|z - z'|^2 on C^n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    A, B, C = _bargmann_blocks(n)
    quad = QuadraticPhase(n=n, alpha0=np.zeros(2 * n), theta=np.zeros(2 * n), A=A, B=B, C=C)
    return PhaseFunction(
        kind="quadratic",
        dim=2 * n,
        backend=quad,
        domain=_default_domain(2 * n),
        self_adjoint=True,
        label="bargmann",
        meta={"n": n},
    )


def make_fubini_study(n: int = 1) -> PhaseFunction:
    """Nonquadratic exact test phase on the unit-chart disk |z| <= 0.7 (n = 1)."""
    if n != 1:
        raise ValueError("the Fubini-Study model is implemented for n = 1 only")
    return PhaseFunction(
        kind="fubini_study",
        dim=2,
        backend=_FubiniStudy(),
        domain=Domain(box=np.full(2, 0.7), rho=2.0),
        self_adjoint=True,
        label="fubini_study",
        meta={"n": 1},
    )


def make_model_quadratic(theta, L, Jt) -> PhaseFunction:
    """Model quadratic phase with data (theta, L, Jt): B = L (Jt - i) L, A = C = i L^2."""
    L = np.asarray(L, dtype=complex)
    Jt = np.asarray(Jt, dtype=complex)
    m = L.shape[0]
    if m % 2 != 0:
        raise ValueError("L must act on an even-dimensional space")
    scale = max(np.max(np.abs(Jt)), 1.0)
    if np.max(np.abs(Jt + Jt.T)) > 1e-12 * scale:
        raise ValueError("Jt must be antisymmetric")
    if np.max(np.abs(Jt @ Jt + np.eye(m))) > 1e-12 * max(scale**2, 1.0):
        raise ValueError("Jt^2 must equal -1")
    if np.max(np.abs(L - L.T)) > 1e-12 * max(np.max(np.abs(L)), 1.0):
        raise ValueError("L must be symmetric")
    D = L @ L
    if np.min(np.linalg.eigvalsh(0.5 * (D + D.conj().T).real)) <= 0:
        raise ValueError("Re(L^2) must be positive definite")
    A = 1j * D
    B = L @ (Jt - 1j * np.eye(m)) @ L
    quad = QuadraticPhase(n=m // 2, alpha0=np.zeros(m), theta=np.asarray(theta, float), A=A,
                          B=B, C=A.copy())
    sa = bool(
        np.max(np.abs(A + np.conj(A))) < 1e-10 and np.max(np.abs(B + np.conj(B).T)) < 1e-10
    )
    return PhaseFunction(
        kind="quadratic", dim=m, backend=quad, domain=_default_domain(m),
        self_adjoint=sa, label="model_quadratic",
    )


def random_quadratic_projector_phase(seed: int, n: int, scramble: str = "general-linear"
                                     ) -> PhaseFunction:
    """Scrambled Bargmann phase phi(S alpha, S beta) plus a random gauge coboundary.

    S is drawn from the seed and normalized to |det S| = 1 so that the scrambled
    family keeps det D = 1 (and hence the exact 2^-n composition constants).
    """
    m = 2 * n
    rng = np.random.default_rng(seed)
    if scramble == "general-linear":
        while True:
            S = np.eye(m) + 0.5 * rng.normal(size=(m, m))
            if np.linalg.cond(S) < 50 and abs(np.linalg.det(S)) > 1e-3:
                break
        S /= abs(np.linalg.det(S)) ** (1.0 / m)
    elif scramble == "symplectic":
        Omega = np.block([[np.zeros((n_ := m // 2, n_)), -np.eye(n_)], [np.eye(n_),
                          np.zeros((n_, n_))]])
        sym = rng.normal(size=(m, m))
        sym = 0.5 * (sym + sym.T)
        S = expm(0.4 * Omega @ sym)
    else:
        raise ValueError("scramble must be 'general-linear' or 'symplectic'")
    A0, B0, C0 = _bargmann_blocks(n)
    A = S.T @ A0 @ S
    B = S.T @ B0 @ S
    C = S.T @ C0 @ S
    # gauge coboundary phi -> phi - f(alpha) + f(beta), f quadratic
    P = 0.3 * rng.normal(size=(m, m))
    P = 0.5 * (P + P.T)
    ell = 0.3 * rng.normal(size=m)
    quad = QuadraticPhase(n=n, alpha0=np.zeros(m), theta=-ell, A=A - P, B=B, C=C + P)
    return PhaseFunction(
        kind="quadratic", dim=m, backend=quad, domain=_default_domain(m),
        self_adjoint=False, label="scrambled",
        meta={"seed": int(seed), "scramble": scramble, "S": S},
    )


def polynomial_phase(m: int, poly: Poly, box: float = 2.0, rho: float = 2.0,
                     self_adjoint: bool = False) -> PhaseFunction:
    """Wrap a Poly in the 2m variables (alpha, beta) as a PhaseFunction."""
    return PhaseFunction(
        kind="polynomial", dim=m, backend=_PolynomialPhase(m, poly),
        domain=Domain(box=np.full(m, float(box)), rho=float(rho)),
        self_adjoint=self_adjoint, label="polynomial",
    )


def quadratic_to_poly(quad: QuadraticPhase) -> Poly:
    """Expand a QuadraticPhase into a Poly over (alpha, beta) around the origin."""
    m = quad.m
    N = 2 * m
    out = Poly(N)
    a_vars = [Poly.variable(N, i) for i in range(m)]
    b_vars = [Poly.variable(N, m + i) for i in range(m)]
    u = [a - float(c) for a, c in zip(a_vars, quad.alpha0)]
    v = [b - float(c) for b, c in zip(b_vars, quad.alpha0)]
    for i in range(m):
        out = out + quad.theta[i] * (u[i] - v[i])
    for i in range(m):
        for j in range(m):
            if quad.A[i, j] != 0:
                out = out + 0.5 * quad.A[i, j] * u[i] * u[j]
            if quad.B[i, j] != 0:
                out = out + quad.B[i, j] * u[i] * v[j]
            if quad.C[i, j] != 0:
                out = out + 0.5 * quad.C[i, j] * v[i] * v[j]
    return out.chop()


def perturbed_phase(base: PhaseFunction, perturbation: Poly) -> PhaseFunction:
    """base phi plus a polynomial perturbation in (alpha, beta); negative-control helper."""
    if base.kind != "quadratic":
        raise ValueError("perturbed_phase expects a quadratic base")
    poly = quadratic_to_poly(base.backend) + perturbation
    return polynomial_phase(base.dim, poly, box=base.domain.box[0] if base.domain.box[0] < 50
                            else 3.0, rho=min(base.domain.rho, 3.0))


# ---------------------------------------------------------------------------
# basic contract checks
# ---------------------------------------------------------------------------


def verify_phase_basics(phase: PhaseFunction, seed: int = 0, nsamples: int = 12) -> dict:
    """Sampled checks: diagonal vanishing, and self-adjointness when claimed."""
    rng = np.random.default_rng(seed)
    box = np.minimum(phase.domain.box, 0.5)
    diag = 0.0
    sa = 0.0
    for _ in range(nsamples):
        a = rng.uniform(-1, 1, size=phase.dim) * box
        b = rng.uniform(-1, 1, size=phase.dim) * box
        diag = max(diag, abs(phase.value(a, a)))
        if phase.self_adjoint:
            sa = max(sa, abs(phase.value(a, b) + np.conj(phase.value(b, a))))
    report = {"diagonal_vanishing": {"residual": diag, "tol": DIAG_TOL, "pass": diag <= DIAG_TOL}}
    if phase.self_adjoint:
        report["self_adjointness"] = {"residual": sa, "tol": DIAG_TOL, "pass": sa <= DIAG_TOL}
    return report


# ---------------------------------------------------------------------------
# phase-spec JSON
# ---------------------------------------------------------------------------


def _matrix_to_json(M) -> list:
    return [[float(c.real), float(c.imag)] for c in np.asarray(M, complex).ravel()]


def _matrix_from_json(entries, m: int, name: str) -> np.ndarray:
    try:
        flat = np.array([complex(re, im) for re, im in entries])
        return flat.reshape(m, m)
    except Exception as exc:
        raise SpecFormatError(f"field '{name}': expected {m * m} [re, im] pairs") from exc


def phase_to_jsonable(phase: PhaseFunction) -> dict:
    out = {"kind": phase.label if phase.label in ("bargmann", "fubini_study", "scrambled")
           else phase.kind, "n": phase.n}
    if out["kind"] == "scrambled":
        out["seed"] = phase.meta["seed"]
        out["scramble"] = phase.meta["scramble"]
    elif out["kind"] == "quadratic":
        quad: QuadraticPhase = phase.backend
        out.update(
            alpha0=list(map(float, quad.alpha0)),
            theta=list(map(float, quad.theta)),
            A=_matrix_to_json(quad.A),
            B=_matrix_to_json(quad.B),
            C=_matrix_to_json(quad.C),
        )
    elif out["kind"] == "polynomial":
        out["poly"] = phase.backend.poly.to_jsonable()
        out["domain"] = {"box": list(map(float, phase.domain.box)), "rho": phase.domain.rho}
    return out


def phase_from_jsonable(obj: dict) -> PhaseFunction:
    if not isinstance(obj, dict):
        raise SpecFormatError("phase spec must be a JSON object")
    kind = obj.get("kind")
    if kind is None:
        raise SpecFormatError("field 'kind': missing")
    try:
        n = int(obj.get("n", 1))
    except (TypeError, ValueError):
        raise SpecFormatError("field 'n': must be an integer")
    if kind == "bargmann":
        return make_bargmann(n)
    if kind == "fubini_study":
        return make_fubini_study(n)
    if kind == "scrambled":
        if "seed" not in obj:
            raise SpecFormatError("field 'seed': required for kind 'scrambled'")
        return random_quadratic_projector_phase(
            int(obj["seed"]), n, obj.get("scramble", "general-linear")
        )
    if kind == "quadratic":
        m = 2 * n
        for f in ("A", "B", "C"):
            if f not in obj:
                raise SpecFormatError(f"field '{f}': required for kind 'quadratic'")
        A = _matrix_from_json(obj["A"], m, "A")
        B = _matrix_from_json(obj["B"], m, "B")
        C = _matrix_from_json(obj["C"], m, "C")
        alpha0 = np.asarray(obj.get("alpha0", np.zeros(m)), dtype=float)
        theta = np.asarray(obj.get("theta", np.zeros(m)), dtype=float)
        if alpha0.shape != (m,):
            raise SpecFormatError(f"field 'alpha0': expected length {m}")
        if theta.shape != (m,):
            raise SpecFormatError(f"field 'theta': expected length {m}")
        try:
            quad = QuadraticPhase(n=n, alpha0=alpha0, theta=theta, A=A, B=B, C=C)
        except ValueError as exc:
            raise SpecFormatError(f"field 'A'/'B'/'C': {exc}") from exc
        sa = bool(np.max(np.abs(A + np.conj(C))) < 1e-10
                  and np.max(np.abs(B + np.conj(B).T)) < 1e-10)
        dom = obj.get("domain")
        domain = (_default_domain(m) if dom is None
                  else Domain(box=np.asarray(dom["box"], float), rho=float(dom["rho"])))
        return PhaseFunction(kind="quadratic", dim=m, backend=quad, domain=domain,
                             self_adjoint=sa, label="quadratic")
    if kind == "polynomial":
        if "poly" not in obj:
            raise SpecFormatError("field 'poly': required for kind 'polynomial'")
        poly = Poly.from_jsonable(obj["poly"])
        dom = obj.get("domain", {"box": [2.0] * (2 * n), "rho": 2.0})
        return PhaseFunction(
            kind="polynomial", dim=2 * n, backend=_PolynomialPhase(2 * n, poly),
            domain=Domain(box=np.asarray(dom["box"], float), rho=float(dom["rho"])),
            self_adjoint=False, label="polynomial",
        )
    raise SpecFormatError(f"field 'kind': unknown kind '{kind}'")
