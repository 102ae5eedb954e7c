"""Exact calculus of Gaussian kernels: quadratic two-point phases with
polynomial amplitudes, closed under composition; model projectors; the ladder
operators on the Hermite class; truncated star products; and quadratic FBI
phase pairs with their density.

A kernel is  K(a, b) = (2 pi h)^(-n) e^{i phi(a, b) / h} amp(a, b)  with phi a
TwoPointQuadratic over d variables per argument and amp a Poly over the 2d
variables (a, b).  For the kernels built from a reproducing phase d = 2n; the
one-dimensional-model kernels use d = n.

Determinant branches: every det^(+-1/2) is the product of principal square
roots of eigenvalues, continuous from the reference point where the matrix is
the identity; an eigenvalue reaching the closed negative real axis raises
BranchError instead of guessing a branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._poly import Poly, expect_tail, poly_allclose, poly_maxdiff
from .errors import BranchError, ConvergenceError, TransversalityError
from .geometry import kahler_triple, split_blocks
from .phase_core import DiagonalJet, PhaseFunction, QuadraticPhase, gauge_normalize

AMPLITUDE_DEGREE_CAP = 6


# ---------------------------------------------------------------------------
# determinant branches and Gaussian integrals
# ---------------------------------------------------------------------------


def det_power_principal(M: np.ndarray, power: float) -> complex:
    """det(M)^power through principal logs of eigenvalues (all in Re > 0)."""
    w = np.linalg.eigvals(np.asarray(M, dtype=complex))
    if np.any(w.real <= 0):
        raise BranchError(
            f"determinant branch: eigenvalue {w[np.argmin(w.real)]:.4g} left the right half-plane"
        )
    return complex(np.exp(power * np.sum(np.log(w))))


def gaussian_integral(hessian, p, h: float, linear=None, const: complex = 0.0) -> complex:
    """Exact integral of e^{i Q(g)/h} p(g) over R^d for quadratic Q.

    Q(g) = const + linear.g + g.hessian.g / 2.  The value is

        (2 pi h)^{d/2} det(hessian / i)^{-1/2} e^{i Q(g_c)/h} E[p(g_c + z)],

    with g_c the critical point and z Gaussian of covariance i h hessian^{-1}
    (Wick contraction, exact for polynomial p).  Raises ConvergenceError when
    Im(hessian) fails to be positive definite.
    """
    Q2 = np.atleast_2d(np.asarray(hessian, dtype=complex))
    d = Q2.shape[0]
    if np.max(np.abs(Q2 - Q2.T)) > 1e-12 * max(np.max(np.abs(Q2)), 1.0):
        raise ValueError("quadratic exponent must be symmetric")
    imag_part = Q2.imag
    if np.min(np.linalg.eigvalsh(0.5 * (imag_part + imag_part.T))) <= 0:
        raise ConvergenceError("Gaussian integral diverges: Im(hessian) is not positive definite")
    if isinstance(p, (int, float, complex)):
        p = Poly.constant(d, p)
    lin = np.zeros(d, dtype=complex) if linear is None else np.asarray(linear, dtype=complex)
    gc = np.linalg.solve(Q2, -lin)
    qc = const + lin @ gc + 0.5 * gc @ Q2 @ gc
    shifted = p.subs_affine(np.eye(d, dtype=complex), gc, d)
    Sigma = 1j * h * np.linalg.inv(Q2)
    ev = expect_tail(shifted, 0, Sigma).coeffs.get((), 0.0)
    prefactor = (2 * np.pi * h) ** (d / 2) * det_power_principal(Q2 / 1j, -0.5)
    return complex(prefactor * np.exp(1j * qc / h) * ev)


# ---------------------------------------------------------------------------
# two-point quadratic phases and Gaussian kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoPointQuadratic:
    """phi(a, b) = const + la.a + lb.b + a.A.a/2 + a.B.b + b.C.b/2 on C^d x C^d."""

    d: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    la: np.ndarray | None = None
    lb: np.ndarray | None = None
    const: complex = 0.0

    def __post_init__(self):
        d = self.d
        for name in ("A", "B", "C"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=complex))
        object.__setattr__(self, "la",
                           np.zeros(d, complex) if self.la is None else np.asarray(self.la, complex))
        object.__setattr__(self, "lb",
                           np.zeros(d, complex) if self.lb is None else np.asarray(self.lb, complex))

    def value(self, a, b) -> complex:
        a = np.asarray(a, dtype=complex)
        b = np.asarray(b, dtype=complex)
        return complex(self.const + self.la @ a + self.lb @ b
                       + 0.5 * a @ self.A @ a + a @ self.B @ b + 0.5 * b @ self.C @ b)

    def adjoint(self) -> "TwoPointQuadratic":
        """Phase of the adjoint kernel: -conj(phi(b, a))."""
        return TwoPointQuadratic(
            d=self.d, A=-np.conj(self.C), B=-np.conj(self.B.T), C=-np.conj(self.A),
            la=-np.conj(self.lb), lb=-np.conj(self.la), const=-np.conj(self.const),
        )

    def close_to(self, other: "TwoPointQuadratic", tol: float = 1e-12) -> bool:
        scale = max(np.max(np.abs(self.B)), 1.0)
        return all(
            np.max(np.abs(np.asarray(getattr(self, f)) - np.asarray(getattr(other, f))))
            <= tol * scale
            for f in ("A", "B", "C", "la", "lb")
        ) and abs(self.const - other.const) <= tol * scale

    def to_poly(self) -> Poly:
        """Poly over the 2d variables (a, b)."""
        d = self.d
        N = 2 * d
        out = Poly.constant(N, self.const)
        out = out + Poly.affine(N, np.concatenate([self.la, self.lb]))
        M = np.zeros((N, N), dtype=complex)
        M[:d, :d] = self.A
        M[:d, d:] = self.B
        M[d:, :d] = self.B.T
        M[d:, d:] = self.C
        return out + Poly.quadratic_form(N, M)

    @staticmethod
    def from_poly(poly: Poly, d: int) -> "TwoPointQuadratic":
        if poly.degree() > 2:
            raise ValueError("phase polynomial has degree > 2")
        N = 2 * d
        A = np.zeros((N, N), dtype=complex)
        lin = np.zeros(N, dtype=complex)
        const = 0.0 + 0.0j
        for k, c in poly.coeffs.items():
            deg = sum(k)
            idx = [i for i, e in enumerate(k) for _ in range(e)]
            if deg == 0:
                const = c
            elif deg == 1:
                lin[idx[0]] += c
            else:
                i, j = idx
                if i == j:
                    A[i, i] += 2 * c
                else:
                    A[i, j] += c
                    A[j, i] += c
        return TwoPointQuadratic(d=d, A=A[:d, :d], B=A[:d, d:], C=A[d:, d:],
                                 la=lin[:d], lb=lin[d:], const=const)

    @staticmethod
    def from_quadratic_phase(quad: QuadraticPhase) -> "TwoPointQuadratic":
        a0 = quad.alpha0.astype(complex)
        la = quad.theta - quad.A @ a0 - quad.B @ a0
        lb = -quad.theta - quad.B.T @ a0 - quad.C @ a0
        const = 0.5 * a0 @ (quad.A + quad.B + quad.B.T + quad.C) @ a0
        return TwoPointQuadratic(d=quad.m, A=quad.A, B=quad.B, C=quad.C, la=la, lb=lb,
                                 const=complex(const))


@dataclass(frozen=True)
class GaussianKernel:
    """K(a, b) = (2 pi h)^(-n) e^{i phase(a,b)/h} amplitude(a, b)."""

    n: int
    d: int
    h: float
    phase: TwoPointQuadratic
    amplitude: Poly
    projector_candidate: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.phase.d != self.d:
            raise ValueError("phase dimension does not match kernel dimension")
        amp = self.amplitude
        if isinstance(amp, (int, float, complex)):
            amp = Poly.constant(2 * self.d, amp)
            object.__setattr__(self, "amplitude", amp)
        if amp.nvars != 2 * self.d:
            raise ValueError("amplitude must be a Poly over the 2d kernel variables")
        if amp.degree() > AMPLITUDE_DEGREE_CAP and not self.meta.get("allow_high_degree"):
            raise ValueError(f"amplitude degree exceeds the cap {AMPLITUDE_DEGREE_CAP}")

    def value(self, a, b) -> complex:
        pref = (2 * np.pi * self.h) ** (-self.n)
        x = np.concatenate([np.asarray(a, complex), np.asarray(b, complex)])
        return complex(pref * np.exp(1j * self.phase.value(a, b) / self.h) * self.amplitude(x))

    def is_self_adjoint_data(self, tol: float = 1e-10) -> bool:
        d = self.d
        swap = np.zeros((2 * d, 2 * d))
        swap[:d, d:] = np.eye(d)
        swap[d:, :d] = np.eye(d)
        amp_sw = self.amplitude.subs_affine(swap, np.zeros(2 * d), 2 * d).conjugate()
        return self.phase.close_to(self.phase.adjoint(), tol) and poly_allclose(
            self.amplitude, amp_sw, tol
        )

    def scaled(self, factor: complex) -> "GaussianKernel":
        return GaussianKernel(n=self.n, d=self.d, h=self.h, phase=self.phase,
                              amplitude=self.amplitude * factor,
                              projector_candidate=self.projector_candidate, meta=dict(self.meta))


def kernels_allclose(K1: GaussianKernel, K2: GaussianKernel, tol: float = 1e-12) -> bool:
    return (K1.n == K2.n and K1.d == K2.d and abs(K1.h - K2.h) < 1e-15
            and K1.phase.close_to(K2.phase, tol) and poly_allclose(K1.amplitude, K2.amplitude, tol))


def kernel_maxdiff(K1: GaussianKernel, K2: GaussianKernel) -> float:
    return poly_maxdiff(K1.amplitude, K2.amplitude)


def compose_kernels_exact(K1: GaussianKernel, K2: GaussianKernel) -> GaussianKernel:
    """Exact closed-form composition int K1(a, g) K2(g, b) dg.

    The output phase is the quadratic critical value of g -> phi1(a, g) +
    phi2(g, b), the amplitude the exact Wick contraction; no remainder term.
    """
    if (K1.d, K1.n) != (K2.d, K2.n) or abs(K1.h - K2.h) > 1e-15:
        raise ValueError("kernels are not composable (mismatched d, n or h)")
    d, h, n = K1.d, K1.h, K1.n
    p1, p2 = K1.phase, K2.phase

    Q2 = p1.C + p2.A
    if np.min(np.linalg.eigvalsh(0.5 * (Q2.imag + Q2.imag.T))) <= 0:
        raise ConvergenceError("composition integral diverges")
    # critical point g_c = Ga a + Gb b + g0
    Qinv = np.linalg.inv(Q2)
    Ga = -Qinv @ p1.B.T
    Gb = -Qinv @ p2.B
    g0 = -Qinv @ (p1.lb + p2.la)

    # substitution maps: old (a, g) or (g, b) -> new (a, b, z) with g = g_c + z
    N = 3 * d
    T_a = np.zeros((2 * d, N), dtype=complex)
    t_a = np.zeros(2 * d, dtype=complex)
    T_a[:d, :d] = np.eye(d)
    T_a[d:, :d] = Ga
    T_a[d:, d : 2 * d] = Gb
    T_a[d:, 2 * d :] = np.eye(d)
    t_a[d:] = g0
    T_b = np.zeros((2 * d, N), dtype=complex)
    t_b = np.zeros(2 * d, dtype=complex)
    T_b[:d, :d] = Ga
    T_b[:d, d : 2 * d] = Gb
    T_b[:d, 2 * d :] = np.eye(d)
    T_b[d:, d : 2 * d] = np.eye(d)
    t_b[:d] = g0

    phase_poly = (p1.to_poly().subs_affine(T_a, t_a, N)
                  + p2.to_poly().subs_affine(T_b, t_b, N))
    # drop the z-dependence of the phase: quadratic part moves to the Gaussian,
    # and the critical point kills the linear part (checked)
    crit = Poly(2 * d, {k[: 2 * d]: c for k, c in phase_poly.coeffs.items()
                        if sum(k[2 * d :]) == 0})
    lin_defect = max((abs(c) for k, c in phase_poly.coeffs.items()
                      if sum(k[2 * d :]) == 1), default=0.0)
    if lin_defect > 1e-10 * max(np.max(np.abs(Q2)), 1.0):
        raise RuntimeError("internal error: phase not critical at g_c")
    new_phase = TwoPointQuadratic.from_poly(crit.chop(1e-14), d)

    amp = (K1.amplitude.subs_affine(T_a, t_a, N) * K2.amplitude.subs_affine(T_b, t_b, N))
    Sigma = 1j * h * Qinv
    new_amp = expect_tail(amp, 2 * d, Sigma)
    factor = (2 * np.pi * h) ** (d / 2 - n) * det_power_principal(Q2 / 1j, -0.5)
    new_amp = (new_amp * factor).chop(1e-15)
    return GaussianKernel(n=n, d=d, h=h, phase=new_phase, amplitude=new_amp,
                          projector_candidate=K1.projector_candidate and K2.projector_candidate,
                          meta={"allow_high_degree": True})


def projector_amplitude(jet: DiagonalJet) -> complex:
    """Leading constant amplitude det(2 D)^(1/2) of the idempotent kernel.

    With the (2 pi h)^(-n) normalization, the constant-amplitude kernel with
    this value composes to itself exactly for quadratic phases.
    """
    _, D = split_blocks(jet.B())
    return det_power_principal(2.0 * D, 0.5)


def kernel_from_phase(phase: PhaseFunction, h: float, amplitude=None,
                      normalize: bool = True) -> GaussianKernel:
    """Gaussian kernel of a quadratic reproducing phase; default amplitude is
    the idempotent constant det(2D)^{1/2}."""
    if phase.kind != "quadratic":
        raise ValueError("kernel_from_phase expects a quadratic phase")
    quad: QuadraticPhase = phase.backend
    jet_phase = TwoPointQuadratic.from_quadratic_phase(quad)
    if amplitude is None:
        from .phase_core import jet_at

        amplitude = projector_amplitude(jet_at(phase, quad.alpha0))
    amp = (Poly.constant(2 * quad.m, amplitude)
           if isinstance(amplitude, (int, float, complex)) else amplitude)
    return GaussianKernel(n=quad.n, d=quad.m, h=h, phase=jet_phase, amplitude=amp,
                          projector_candidate=True)


# ---------------------------------------------------------------------------
# model kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StandardProjector:
    """Rank-one-in-x model: (P f)(x, x') = f(0, x'); x, x' in R^n."""

    n: int

    def apply_poly(self, f: Poly) -> Poly:
        """f is a Poly over the 2n variables (x, x'); returns f(0, x')."""
        out = {}
        for k, c in f.coeffs.items():
            if sum(k[: self.n]) == 0:
                out[k] = out.get(k, 0.0) + c
        return Poly(f.nvars, out)

    def apply_callable(self, f):
        n = self.n
        return lambda x, xp: f(np.zeros(n), xp)


def model_kernel(model: str, n: int, h: float):
    """Builtin model kernels.

    'bargmann'           exact projector kernel of the Gaussian model phase,
                         d = 2n, amplitude 2^n;
    'gaussian_standard'  rank-one Gaussian projector in the transverse block,
                         d = n, phase (i/2)(x^2 + y^2), amplitude 2^n (pi h)^{n/2}
                         (the constant that makes it exactly idempotent);
    'standard'           the distributional rank-one-in-x record (P f)(x, x') = f(0, x').
    """
    if model == "standard":
        return StandardProjector(n=n)
    if model == "bargmann":
        from .phase_core import make_bargmann

        return kernel_from_phase(make_bargmann(n), h, amplitude=2.0**n)
    if model == "gaussian_standard":
        phase = TwoPointQuadratic(d=n, A=1j * np.eye(n), B=np.zeros((n, n)), C=1j * np.eye(n))
        amp = 2.0**n * (np.pi * h) ** (n / 2)
        return GaussianKernel(n=n, d=n, h=h, phase=phase, amplitude=Poly.constant(2 * n, amp),
                              projector_candidate=True)
    raise ValueError(f"unknown model '{model}'")


# ---------------------------------------------------------------------------
# Hermite class and ladder operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HermiteFunction:
    """f(x) = poly(x - center) exp(-(x - center).G.(x - center) / (2h))."""

    n: int
    h: float
    center: np.ndarray
    poly: Poly
    G: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=complex))
        G = np.asarray(self.G, dtype=complex)
        if np.min(np.linalg.eigvalsh(0.5 * (G.real + G.real.T))) <= 0:
            raise ValueError("Gaussian exponent must have positive-definite real part")
        object.__setattr__(self, "G", G)

    def value(self, x) -> complex:
        y = np.asarray(x, dtype=complex) - self.center
        return complex(self.poly(y) * np.exp(-(y @ self.G @ y) / (2 * self.h)))

    def _compatible(self, other: "HermiteFunction"):
        if (self.n != other.n or abs(self.h - other.h) > 1e-15
                or np.max(np.abs(self.center - other.center)) > 1e-13
                or np.max(np.abs(self.G - other.G)) > 1e-13):
            raise ValueError("Hermite functions have different Gaussian data")

    def __add__(self, other: "HermiteFunction") -> "HermiteFunction":
        self._compatible(other)
        return HermiteFunction(self.n, self.h, self.center, self.poly + other.poly, self.G)

    def __sub__(self, other: "HermiteFunction") -> "HermiteFunction":
        self._compatible(other)
        return HermiteFunction(self.n, self.h, self.center, self.poly - other.poly, self.G)

    def __mul__(self, c) -> "HermiteFunction":
        return HermiteFunction(self.n, self.h, self.center, self.poly * c, self.G)

    __rmul__ = __mul__

    def max_coeff(self) -> float:
        return max((abs(c) for c in self.poly.coeffs.values()), default=0.0)

    def norm_squared(self) -> float:
        """L^2 norm squared (exact Gaussian integral)."""
        prod = self.poly * self.poly.conjugate()
        Q2 = 1j * (self.G + np.conj(self.G))  # e^{iQ/h} with Q = i(G + conj G) y^2 / 2
        val = gaussian_integral(Q2, prod, self.h)
        return float(np.real(val))


def ground_gaussian(n: int, h: float) -> HermiteFunction:
    """(pi h)^(-n/4) e^{-x^2 / 2h}: the L^2-normalized ground state."""
    return HermiteFunction(n=n, h=h, center=np.zeros(n), G=np.eye(n),
                           poly=Poly.constant(n, (np.pi * h) ** (-n / 4)))


def zeta_action(which: str, j: int, f: HermiteFunction, h: float | None = None
                ) -> HermiteFunction:
    """Ladder operators on the Hermite class.

    zeta_j      = (h d/dx_j + x_j) / sqrt(2)      (annihilates the ground Gaussian)
    zeta_star_j = (x_j - h d/dx_j) / sqrt(2)

    These satisfy [zeta_j, zeta_star_k] = h delta_jk and commute among
    themselves, exactly on this class.
    """
    if h is None:
        h = f.h
    if abs(h - f.h) > 1e-15:
        raise ValueError("h mismatch")
    y_j = Poly.variable(f.n, j)
    Gy_j = Poly.affine(f.n, f.G[j])
    hdp = h * f.poly.diff(j) - f.poly * Gy_j  # h d/dx_j acting through the Gaussian
    xp = (y_j + complex(f.center[j])) * f.poly
    if which in ("zeta", "z"):
        new = (hdp + xp) * (1 / math.sqrt(2))
    elif which in ("zeta_star", "zs", "z*"):
        new = (xp - hdp) * (1 / math.sqrt(2))
    else:
        raise ValueError("which must be 'zeta' or 'zeta_star'")
    return HermiteFunction(f.n, f.h, f.center, new.chop(1e-16), f.G)


def hermite_ladder(n: int, h: float, count: int) -> list[HermiteFunction]:
    """First `count` Hermite functions (zeta_star powers of the ground state, axis 0)."""
    out = [ground_gaussian(n, h)]
    for _ in range(count - 1):
        out.append(zeta_action("zeta_star", 0, out[-1]))
    return out


def apply_kernel_to_hermite(K: GaussianKernel, f: HermiteFunction) -> HermiteFunction:
    """Exact action of a Gaussian kernel on a Hermite-class function."""
    if f.n != K.d:
        raise ValueError("dimension mismatch")
    d, h = K.d, K.h
    # exponent in y: phi(x, y)/1 + (i/2) (y - c).G.(y - c); variables (x, y-c)
    p = K.phase
    c = f.center
    Q2 = p.C + 1j * f.G
    lin_y = p.lb + p.C @ c  # from expanding phi(x, c + w) in w, x-independent part
    Bx = p.B  # coupling x -> w
    if np.min(np.linalg.eigvalsh(0.5 * (Q2.imag + Q2.imag.T))) <= 0:
        raise ConvergenceError("kernel application diverges")
    Qinv = np.linalg.inv(Q2)
    # critical point w_c(x) = -Qinv (B^T x + lin_y)
    Ga = -Qinv @ Bx.T
    g0 = -Qinv @ lin_y

    N = 2 * d  # variables (x, z) with w = w_c(x) + z
    T_w = np.zeros((d, N), dtype=complex)
    T_w[:, :d] = Ga
    T_w[:, d:] = np.eye(d)
    # phase value phi(x, c + w) as poly over (x, w) then substitute
    Tp = np.zeros((2 * d, N), dtype=complex)
    tp = np.zeros(2 * d, dtype=complex)
    Tp[:d, :d] = np.eye(d)
    Tp[d:] = T_w
    tp[d:] = c + g0
    phase_poly = p.to_poly().subs_affine(Tp, tp, N)
    gauss_poly = Poly.quadratic_form(d, 1j * f.G).subs_affine(T_w, g0, N)
    total_phase = phase_poly + gauss_poly
    lin_defect = max((abs(v) for k, v in total_phase.coeffs.items() if sum(k[d:]) == 1),
                     default=0.0)
    if lin_defect > 1e-10 * max(np.max(np.abs(Q2)), 1.0):
        raise RuntimeError("internal error: application phase not critical at w_c")
    crit = Poly(d, {k[:d]: v for k, v in total_phase.coeffs.items() if sum(k[d:]) == 0})

    amp_T = np.zeros((2 * d, N), dtype=complex)
    amp_t = np.zeros(2 * d, dtype=complex)
    amp_T[:d, :d] = np.eye(d)
    amp_T[d:] = T_w
    amp_t[d:] = c + g0
    amp = K.amplitude.subs_affine(amp_T, amp_t, N)
    fpoly = f.poly.subs_affine(T_w, g0, N)
    Sigma = 1j * h * Qinv
    out_amp = expect_tail(amp * fpoly, d, Sigma)
    factor = (2 * np.pi * h) ** (d / 2 - K.n) * det_power_principal(Q2 / 1j, -0.5)

    # reorganize e^{i crit / h} into the shifted-Gaussian normal form
    tpq = TwoPointQuadratic.from_poly(crit.promote(2 * d, 0), d)  # abuse: A-block only
    Gout = -1j * tpq.A
    lin = tpq.la
    center_out = np.linalg.solve(Gout, 1j * lin) if np.max(np.abs(lin)) > 0 else np.zeros(d)
    # residual constant from completing the square
    resid = tpq.const - 0.5j * (center_out @ Gout @ center_out)
    scale = np.exp(1j * resid / h) if abs(resid) > 0 else 1.0
    shift = out_amp.subs_affine(np.eye(d, dtype=complex), center_out, d)
    return HermiteFunction(n=d, h=h, center=center_out,
                           poly=(shift * (factor * scale)).chop(1e-15), G=Gout)


# ---------------------------------------------------------------------------
# star product and the local projector criterion
# ---------------------------------------------------------------------------


def star_product_truncated(p: Poly, q: Poly, order: int, h: float, n: int | None = None) -> Poly:
    """sum_{|nu| <= order} (i h)^{|nu|} / nu! d_xi^nu p d_x^nu q.

    Symbols are Polys over the 2n variables (x_1..x_n, xi_1..xi_n); exact for
    polynomials once order >= min(deg_xi p, deg_x q).
    """
    if order > 8:
        raise ValueError("truncation order capped at 8")
    if p.nvars != q.nvars or p.nvars % 2 != 0:
        raise ValueError("symbols must share an even variable count (x, xi)")
    n = p.nvars // 2 if n is None else n
    out = Poly(p.nvars)
    from .phase_core import _multi_indices

    for total in range(order + 1):
        for nu in _multi_indices(n, total):
            dp = p
            dq = q
            for j, e in enumerate(nu):
                for _ in range(e):
                    dp = dp.diff(n + j)
                    dq = dq.diff(j)
            if not dp.coeffs or not dq.coeffs:
                continue
            coeff = (1j * h) ** total / _nu_factorial(nu)
            out = out + coeff * (dp * dq)
    return out.chop(1e-16)


def _nu_factorial(nu) -> float:
    out = 1.0
    for e in nu:
        out *= math.factorial(e)
    return out


def local_projector_test(a: Poly, n: int = 1) -> tuple:
    """Decide whether Op(a) P_standard is an exact model-level projector.

    `a` is a polynomial symbol in (x, xi, x', xi') (n = p = 1: four variables).
    The criterion is that the restriction a(0, 0, x', xi') is the constant 1;
    returns (True, None) or (False, (monomial, coefficient)) with the largest
    offending coefficient as witness.
    """
    if a.nvars != 4 * n:
        raise ValueError("symbol must have 4n variables (x, xi, x', xi')")
    zero = (0,) * (4 * n)
    if abs(a.coeffs.get(zero, 0.0)) < 1e-14:
        raise ValueError("symbol is not elliptic at 0")
    restricted = {k: c for k, c in a.coeffs.items() if sum(k[: 2 * n]) == 0}
    defect = dict(restricted)
    defect[zero] = defect.get(zero, 0.0) - 1.0
    offending = {k: c for k, c in defect.items() if abs(c) > 1e-13}
    if not offending:
        return True, None
    worst = max(offending, key=lambda k: abs(offending[k]))
    return False, (worst, offending[worst])


# ---------------------------------------------------------------------------
# FBI phase pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FBIPhase:
    """Quadratic phase psi(alpha, x) (side 'T') or psi*(x, beta) (side 'S').

    The polynomial lives on 3n variables: (alpha_1..alpha_2n, x_1..x_n) for the
    T side and (x_1..x_n, beta_1..beta_2n) for the S side.  `frame` holds the
    position-direction columns used by the density formula.
    """

    n: int
    side: str
    poly: Poly
    frame: np.ndarray

    def value(self, first, second) -> complex:
        return self.poly(np.concatenate([np.asarray(first, complex),
                                         np.asarray(second, complex)]))

    def hessian(self) -> np.ndarray:
        N = self.poly.nvars
        H = np.zeros((N, N), dtype=complex)
        for k, c in self.poly.coeffs.items():
            if sum(k) != 2:
                continue
            idx = [i for i, e in enumerate(k) for _ in range(e)]
            i, j = idx
            if i == j:
                H[i, i] += 2 * c
            else:
                H[i, j] += c
                H[j, i] += c
        return H

    def imag_form_eigenvalues(self) -> np.ndarray:
        H = self.hessian()
        return np.linalg.eigvalsh(0.5 * (H.imag + H.imag.T))


def flat_fbi_pair(n: int) -> tuple[FBIPhase, FBIPhase]:
    """The transverse-model pair: psi = <a_x - x, a_xi> + (i/2)|a_x - x|^2 and
    its adjoint psi* = <x - b_x, b_xi> + (i/2)|x - b_x|^2."""
    N = 3 * n
    psi = Poly(N)
    psis = Poly(N)
    for j in range(n):
        ax = Poly.variable(N, j)
        axi = Poly.variable(N, n + j)
        x = Poly.variable(N, 2 * n + j)
        diff = ax - x
        psi = psi + diff * axi + 0.5j * diff * diff
        xs = Poly.variable(N, j)
        bx = Poly.variable(N, n + j)
        bxi = Poly.variable(N, 2 * n + j)
        diffs = xs - bx
        psis = psis + diffs * bxi + 0.5j * diffs * diffs
    frame = np.zeros((2 * n, n))
    frame[:n, :] = np.eye(n)
    return (FBIPhase(n=n, side="T", poly=psi, frame=frame),
            FBIPhase(n=n, side="S", poly=psis, frame=frame))


def _sigma_side_darboux(R: np.ndarray):
    """Real Darboux basis (Y, H) for the restricted form 2 u.R.v on the base,
    normalized to match the ambient pairing of (x, xi) unit vectors."""
    m = R.shape[0]
    form = 2.0 * R
    work = [np.eye(m)[:, j] for j in range(m)]
    Ys, Hs = [], []
    while work:
        e = work.pop(0)
        if np.linalg.norm(e) < 1e-12:
            continue
        e = e / np.linalg.norm(e)
        vals = [abs(e @ form @ w) for w in work]
        if not vals or max(vals) < 1e-12:
            raise ValueError("degenerate restricted form")
        k = int(np.argmax(vals))
        f = work.pop(k)
        f = f / (-(e @ form @ f))
        nw = []
        for w in work:
            w = w - (w @ form @ f) / (e @ form @ f) * e - (e @ form @ w) / (e @ form @ f) * f
            if np.linalg.norm(w) > 1e-12:
                nw.append(w)
        work = nw
        Ys.append(e)
        Hs.append(f)
    return np.column_stack(Ys), np.column_stack(Hs)


def fbi_phase_pair(qphase: PhaseFunction | str, n: int | None = None
                   ) -> tuple[FBIPhase, FBIPhase]:
    """Quadratic generating pair (psi, psi*) of the incoming/outgoing relations.

    Pass "flat" (with n) for the transverse model displayed pair.  For a
    quadratic reproducing phase the pair is solved linearly from the leaf and
    base tangent data; the imaginary part of psi is positive semidefinite with
    kernel exactly the real locus, which is verified and raised on failure as
    an internal inconsistency (valid phases cannot produce it).
    """
    if isinstance(qphase, str):
        if qphase != "flat":
            raise ValueError("string model must be 'flat'")
        if n is None:
            raise ValueError("flat model needs n")
        return flat_fbi_pair(n)

    from .phase_core import jet_at

    if qphase.kind != "quadratic":
        raise ValueError("fbi_phase_pair expects a quadratic phase (or 'flat')")
    quad: QuadraticPhase = qphase.backend
    jet, _ = gauge_normalize(jet_at(qphase, quad.alpha0))
    kd = kahler_triple(jet)
    m = 2 * kd.n
    nloc = kd.n
    A, B = kd.A, kd.B
    theta = kd.theta

    Y, H = _sigma_side_darboux(kd.R)
    YH = np.hstack([Y, H])
    coord_of_u = np.linalg.inv(YH)  # rows: y-coordinates then eta-coordinates

    kerBT = _null(B.T)
    kerB = _null(B)
    if kerBT.shape[1] != nloc or kerB.shape[1] != nloc:
        raise TransversalityError("cross Hessian does not have the expected corank")

    psi = _solve_fbi_side(theta, A, B, Y, H, coord_of_u, kerBT, side="T", C=kd.C)
    psis = _solve_fbi_side(theta, A, B, Y, H, coord_of_u, kerB, side="S", C=kd.C)
    return psi, psis


def _null(M):
    u, s, vh = np.linalg.svd(M)
    if s.size == 0 or s[0] == 0:
        return np.eye(M.shape[1], dtype=complex)
    rank = int(np.sum(s > 1e-10 * s[0]))
    return vh[rank:].conj().T


def _solve_fbi_side(theta, A, B, Y, H, coord_of_u, leaf_base, side: str, C) -> FBIPhase:
    m = A.shape[0]
    n = m // 2
    N = 3 * n
    nparams = m + n
    # parameters (u in C^2n, c in C^n); columns = parameter basis vectors
    P = np.eye(nparams, dtype=complex)
    base_pos = np.zeros((m, nparams), dtype=complex)
    base_pos[:, :m] = np.eye(m)
    base_pos[:, m:] = leaf_base
    x_coord = coord_of_u[:n] @ np.eye(m, nparams, dtype=complex)  # y-coords of u
    eta_coord = coord_of_u[n:] @ np.eye(m, nparams, dtype=complex)

    AB = A + B
    # fiber of s + leaf: (A+B) u + M_leaf c
    M_leaf = A @ leaf_base if side == "T" else (-C) @ leaf_base
    fiber = np.zeros((m, nparams), dtype=complex)
    fiber[:, :m] = AB
    fiber[:, m:] = M_leaf

    # coordinates (alpha, x) resp. (x, beta) and target gradients
    coords = np.zeros((N, nparams), dtype=complex)
    grads = np.zeros((N, nparams), dtype=complex)
    if side == "T":
        coords[: 2 * n] = base_pos
        coords[2 * n :] = x_coord
        grads[: 2 * n] = fiber
        grads[2 * n :] = -eta_coord
        lin = np.concatenate([theta.astype(complex), np.zeros(n)])
    else:
        coords[:n] = x_coord
        coords[n:] = base_pos
        grads[:n] = eta_coord
        grads[n:] = -fiber
        lin = np.concatenate([np.zeros(n), -theta.astype(complex)])

    if np.linalg.cond(coords) > 1e10:
        raise TransversalityError("relation is not transverse to the vertical")
    Hess = grads @ np.linalg.inv(coords)
    sym_defect = np.max(np.abs(Hess - Hess.T))
    if sym_defect > 1e-8 * max(np.max(np.abs(Hess)), 1.0):
        raise TransversalityError("generating Hessian failed to be symmetric")
    Hess = 0.5 * (Hess + Hess.T)

    poly = Poly.quadratic_form(N, Hess) + Poly.affine(N, lin)
    out = FBIPhase(n=n, side=side, poly=poly.chop(1e-14), frame=Y)

    # contract: Im psi >= 0 with kernel of dimension exactly 2n (the real locus)
    eigs = out.imag_form_eigenvalues()
    if np.min(eigs) < -1e-9 or int(np.sum(np.abs(eigs) < 1e-9)) != 2 * n:
        raise TransversalityError("Im(psi) is not positive with real-locus kernel")
    return out


def fbi_density_sigma(psi: FBIPhase, psi_star: FBIPhase) -> complex:
    """Leading density sigma = det((1/i) d^2_{a_x}[psi*(x, a) + psi(a, y)])^{-1/2},
    evaluated on the position frame of the pair (principal branch)."""
    n = psi.n
    H_T = psi.hessian()[: 2 * n, : 2 * n]
    H_S = psi_star.hessian()[n:, n:]
    total = H_T + H_S
    Y = psi.frame.astype(complex)
    block = Y.T @ total @ Y
    M = block / 1j
    if np.linalg.cond(M) > 1e12:
        raise ValueError("singular position Hessian in the density formula")
    return det_power_principal(M, -0.5)
