"""Geometric package carried by a reproducing phase at a diagonal point.

From the order-2 jet one extracts theta and the blocks (A, B, C), reorganized
into

    R = (B^T - B)/2,   D = i (B + B^T)/2,   P = (A - C)/2,

with the derived operators J = -D^{-1} R, L = sqrt(D) and Jt = -L^{-1} R L^{-1}.
The checks below verify the structural identities (J^2 = -1, J^T D = R,
B = L (Jt - i) L, rank of the cross Hessian, leaf positivity) and expose the
tangent models of the associated coisotropic sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import BranchError
from .phase_core import DiagonalJet, PhaseFunction

DEFAULT_TOL = 1e-8

# imaginary parts of R and P below this relative size are zeroed
IMAG_CHOP = 1e-8


def split_blocks(B: np.ndarray):
    """R, D from the mixed Hessian block."""
    R = 0.5 * (B.T - B)
    D = 0.5j * (B + B.T)
    return R, D


def matrix_sqrt_symmetric(D: np.ndarray) -> np.ndarray:
    """Principal square root of a complex symmetric matrix with Re D > 0.

    Continuous from L = 1 at D = 1 (principal branch per eigenvalue); raises
    BranchError if an eigenvalue of D reaches the closed negative real axis.
    """
    D = np.asarray(D, dtype=complex)
    w = np.linalg.eigvals(D)
    if np.any((w.real <= 0) & (np.abs(w.imag) < 1e-14)):
        raise BranchError("matrix square root: eigenvalue on the negative real axis")
    L = scipy.linalg.sqrtm(D)
    L = 0.5 * (L + L.T)  # sqrtm of a symmetric matrix is symmetric up to roundoff
    return np.asarray(L, dtype=complex)


@dataclass(frozen=True)
class KahlerData:
    """Diagonal geometric package (theta, A, B, C, R, D, P, L, J, Jt)."""

    basepoint: np.ndarray
    theta: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    R: np.ndarray
    D: np.ndarray
    P: np.ndarray
    L: np.ndarray
    J: np.ndarray
    Jt: np.ndarray

    @property
    def n(self) -> int:
        return len(self.basepoint) // 2

    def omega(self, u, v) -> complex:
        return complex(np.asarray(u) @ self.R @ np.asarray(v))

    def metric(self, u, v) -> complex:
        return complex(np.asarray(u) @ self.D @ np.asarray(v))


def kahler_triple(jet: DiagonalJet) -> KahlerData:
    """Extract the geometric package from a diagonal jet.

    Works on gauge-normalized jets (P = 0) or raw jets (P is recorded but not
    used downstream).  Raises if Re D fails to be positive definite or if R, P
    fail to be real: both signal that the jet does not come from a reproducing
    phase.
    """
    A, B, C = jet.A(), jet.B(), jet.C()
    scale = max(np.max(np.abs(B)), 1.0)
    R, D = split_blocks(B)
    P = 0.5 * (A - C)
    if np.max(np.abs(R.imag)) > IMAG_CHOP * scale:
        raise ValueError("R = (B^T - B)/2 is not real")
    if np.max(np.abs(P.imag)) > IMAG_CHOP * scale:
        raise ValueError("P = (A - C)/2 is not real")
    R = R.real.astype(float)
    P = P.real.astype(float)
    ReD = 0.5 * (D + np.conj(D).T).real
    if np.min(np.linalg.eigvalsh(ReD)) <= 0:
        raise ValueError("Re D is not positive definite")
    L = matrix_sqrt_symmetric(D)
    Linv = np.linalg.inv(L)
    J = -np.linalg.solve(D, R.astype(complex))
    Jt = -Linv @ R @ Linv
    theta = jet.theta()
    if np.max(np.abs(theta.imag)) > IMAG_CHOP * max(np.max(np.abs(theta)), 1.0):
        raise ValueError("theta is not real")
    return KahlerData(
        basepoint=jet.basepoint, theta=theta.real.astype(float),
        A=A, B=B, C=C, R=R, D=D, P=P, L=L, J=J, Jt=Jt,
    )


def check_projector_jet(jet: DiagonalJet, tol: float = DEFAULT_TOL) -> dict:
    """Named residuals of the reproducing-phase axioms at jet level.

    Returns {check: {"residual": float, "tol": float, "pass": bool}} plus an
    "overall" entry; failures are report entries, never exceptions.
    """
    A, B, C = jet.A(), jet.B(), jet.C()
    scale = max(np.max(np.abs(B)), 1.0)
    R, D = split_blocks(B)
    P = 0.5 * (A - C)

    report = {}

    def entry(name, residual, tol_=tol):
        report[name] = {"residual": float(residual), "tol": float(tol_),
                        "pass": bool(residual <= tol_)}

    entry("diagonal_vanishing", jet.diagonal_residual() / scale)
    entry("zero_sum_constraint", np.max(np.abs(A + B + B.T + C)) / scale)
    entry("R_real", np.max(np.abs(R.imag)) / scale)
    entry("P_real", np.max(np.abs(P.imag)) / scale)
    min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (D + np.conj(D).T).real)))
    report["ReD_positive"] = {"residual": min_eig, "tol": 0.0, "pass": bool(min_eig > 0)}
    if min_eig > 0:
        J = -np.linalg.solve(D, R.real.astype(complex))
        m = len(jet.basepoint)
        entry("J_squared_plus_identity",
              float(np.linalg.norm(J @ J + np.eye(m), "fro")))
    else:
        report["J_squared_plus_identity"] = {"residual": float("inf"), "tol": tol, "pass": False}
    report["overall"] = {"pass": all(v["pass"] for k, v in report.items() if k != "overall")}
    return report


def rank_cross_hessian(phase: PhaseFunction, alpha, beta) -> int:
    """Numerical rank of the mixed Hessian d_alpha d_beta phi at (alpha, beta)."""
    _, B, _ = phase.hessians(alpha, beta)
    s = np.linalg.svd(B, compute_uv=False)
    if not np.all(np.isfinite(s)):
        raise ValueError("cross Hessian has non-finite entries")
    if s[0] == 0:
        return 0
    return int(np.sum(s > 1e-8 * s[0]))


@dataclass(frozen=True)
class TangentModel:
    """Tangent-space models in C^(4n) at (basepoint, theta): ambient order is
    (base directions, fiber directions)."""

    basepoint: np.ndarray
    J_phi: np.ndarray
    J_phi_star: np.ndarray
    Sigma: np.ndarray
    F_phi: np.ndarray
    F_phi_star: np.ndarray

    def dims(self) -> dict:
        return {
            "J_phi": self.J_phi.shape[1],
            "J_phi_star": self.J_phi_star.shape[1],
            "Sigma": self.Sigma.shape[1],
            "F_phi": self.F_phi.shape[1],
            "F_phi_star": self.F_phi_star.shape[1],
        }


def _nullspace(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    u, s, vh = np.linalg.svd(M)
    if s.size == 0 or s[0] == 0:
        return np.eye(M.shape[1], dtype=complex)
    rank = int(np.sum(s > rtol * s[0]))
    return vh[rank:].conj().T


def _graph(top: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Columns (u, M u) for u the columns of `top`."""
    return np.vstack([top, M @ top])


def tangent_models(jet: DiagonalJet) -> TangentModel:
    """Tangent spaces of the two coisotropic sets, their intersection and leaves.

    T J      = {(u, A u + B v)},        dimension 3n,
    T J*     = {(v, -C v - B^T u)},     dimension 3n,
    T Sigma  = {(u, (A + B) u)},        dimension 2n,
    T F      = {(u, A u)  : B^T u = 0}, dimension n,
    T F*     = {(v, -C v) : B v = 0},   dimension n.

    Raises ValueError naming the failing dimension when the cross Hessian is
    degenerate.
    """
    A, B, C = jet.A(), jet.B(), jet.C()
    m = len(jet.basepoint)
    n = m // 2
    eye = np.eye(m, dtype=complex)

    JT = _colspace(np.hstack([_graph(eye, A), np.vstack([np.zeros((m, m)), B])]))
    JS = _colspace(np.hstack([_graph(eye, -C), np.vstack([np.zeros((m, m)), -B.T])]))
    Sigma = _graph(eye, A + B)
    kerBT = _nullspace(B.T)
    kerB = _nullspace(B)
    F = _graph(kerBT, A)
    Fs = _graph(kerB, -C)

    expected = {"J_phi": 3 * n, "J_phi_star": 3 * n, "Sigma": 2 * n, "F_phi": n,
                "F_phi_star": n}
    got = {"J_phi": JT.shape[1], "J_phi_star": JS.shape[1], "Sigma": Sigma.shape[1],
           "F_phi": F.shape[1], "F_phi_star": Fs.shape[1]}
    bad = {k: (got[k], expected[k]) for k in expected if got[k] != expected[k]}
    if bad:
        raise ValueError(f"tangent model dimension mismatch: {bad}")
    return TangentModel(basepoint=jet.basepoint, J_phi=JT, J_phi_star=JS, Sigma=Sigma,
                        F_phi=F, F_phi_star=Fs)


def _colspace(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return M[:, :0]
    rank = int(np.sum(s > rtol * s[0]))
    return u[:, :rank]


def positivity_leaf(jet: DiagonalJet) -> dict:
    """Hermitian form of Im(A) restricted to the leaf directions ker B^T.

    Reports the eigenvalues of the restricted form; pass iff the smallest is
    positive.  Expects a gauge-normalized jet.
    """
    A, B, _ = jet.A(), jet.B(), jet.C()
    kerBT = _nullspace(B.T)
    Q, _ = np.linalg.qr(kerBT)
    H = Q.conj().T @ np.asarray(A.imag, dtype=complex) @ Q
    H = 0.5 * (H + H.conj().T)
    eigs = np.linalg.eigvalsh(H)
    return {
        "leaf_dimension": int(Q.shape[1]),
        "eigenvalues": [float(e) for e in eigs],
        "min_eigenvalue": float(eigs[0]) if eigs.size else float("nan"),
        "pass": bool(eigs.size and eigs[0] > 0),
    }
