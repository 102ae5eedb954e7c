"""Complexified critical points of gamma -> phi(alpha, gamma) + phi(gamma, beta)
and the identities they satisfy (reproducing value, gradient matching,
associativity, critical-value composition).

Newton runs on the holomorphic gradient

    G(gamma) = d_beta phi(alpha, gamma) + d_alpha phi(gamma, beta)

with Jacobian F = d^2_beta phi(alpha, gamma) + d^2_alpha phi(gamma, beta) and
initial guess (alpha + beta)/2.  For quadratic phases the gradient is affine,
so one step is exact.  Independent solves are pure and parallelize over
sample pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError
from .phase_core import PhaseFunction

# documented default: reject pairs separated by more than half the
# complexification radius (the statements being checked are germ-local)
BASIN_FACTOR = 0.5


@dataclass(frozen=True)
class CriticalSolveResult:
    gamma_c: np.ndarray
    residual: float
    iterations: int
    critical_value: complex


def _gradient(phase: PhaseFunction, alpha, beta, gamma):
    _, gb = phase.grads(alpha, gamma)
    ga, _ = phase.grads(gamma, beta)
    return gb + ga


def solve_gamma_c(phase: PhaseFunction, alpha, beta, tol: float = 1e-12,
                  max_iter: int = 50, check_basin: bool = True) -> CriticalSolveResult:
    """Newton solve for the unique near-diagonal critical point gamma_c(alpha, beta).

    Accepts complex alpha, beta (within the complexification radius).  Raises
    SolverError on a numerically singular Jacobian (condition > 1e12) or
    non-convergence.
    """
    alpha = np.asarray(alpha, dtype=complex)
    beta = np.asarray(beta, dtype=complex)
    sep = float(np.linalg.norm(alpha - beta))
    if check_basin and sep > BASIN_FACTOR * phase.domain.rho:
        raise SolverError(
            f"|alpha - beta| = {sep:.3g} exceeds the Newton basin "
            f"{BASIN_FACTOR * phase.domain.rho:.3g}"
        )
    gamma = 0.5 * (alpha + beta)
    g = _gradient(phase, alpha, beta, gamma)
    res = float(np.linalg.norm(g))
    for it in range(max_iter):
        if res <= tol:
            val = phase.value(alpha, gamma) + phase.value(gamma, beta)
            return CriticalSolveResult(gamma_c=gamma, residual=res, iterations=it,
                                       critical_value=complex(val))
        _, _, Cblk = phase.hessians(alpha, gamma)
        Ablk, _, _ = phase.hessians(gamma, beta)
        F = Cblk + Ablk
        if np.linalg.cond(F) > 1e12:
            raise SolverError("critical-point Jacobian is numerically singular")
        gamma = gamma - np.linalg.solve(F, g)
        g = _gradient(phase, alpha, beta, gamma)
        res = float(np.linalg.norm(g))
    raise SolverError(f"no convergence in {max_iter} Newton steps (residual {res:.3g})")


def reproducing_residual(phase: PhaseFunction, alpha, beta, tol: float = 1e-12) -> float:
    """|phi(alpha, gamma_c) + phi(gamma_c, beta) - phi(alpha, beta)|."""
    sol = solve_gamma_c(phase, alpha, beta, tol=tol)
    return abs(sol.critical_value - phase.value(alpha, beta))


def d_critique_residual(phase: PhaseFunction, alpha, beta, tol: float = 1e-12):
    """Norms of the three gradient identities at gamma_c.

    Returns (solved-equation defect,
             |d_beta phi(gamma_c, beta) - d_beta phi(alpha, beta)|,
             |d_alpha phi(alpha, gamma_c) - d_alpha phi(alpha, beta)|).
    """
    sol = solve_gamma_c(phase, alpha, beta, tol=tol)
    g = sol.gamma_c
    _, gb_ag = phase.grads(alpha, g)
    ga_gb, gb_gb = phase.grads(g, beta)
    ga_ab, gb_ab = phase.grads(alpha, beta)
    ga_ag, _ = phase.grads(alpha, g)
    first = float(np.linalg.norm(gb_ag + ga_gb))
    second = float(np.linalg.norm(gb_gb - gb_ab))
    third = float(np.linalg.norm(ga_ag - ga_ab))
    return first, second, third


def associativity_residual(phase: PhaseFunction, alpha, beta, tol: float = 1e-12) -> float:
    """max(|gamma_c(gamma_c, beta) - gamma_c|, |gamma_c(alpha, gamma_c) - gamma_c|)."""
    sol = solve_gamma_c(phase, alpha, beta, tol=tol)
    g = sol.gamma_c
    left = solve_gamma_c(phase, g, beta, tol=tol, check_basin=False).gamma_c
    right = solve_gamma_c(phase, alpha, g, tol=tol, check_basin=False).gamma_c
    return float(max(np.linalg.norm(left - g), np.linalg.norm(right - g)))


def compose_phases_vc(phase1: PhaseFunction, phase2: PhaseFunction, alpha, beta,
                      tol: float = 1e-12) -> complex:
    """Critical value of gamma -> phi1(alpha, gamma) + phi2(gamma, beta).

    Quadratic pairs are composed by one exact linear solve; other backends run
    the same Newton machinery on the mixed gradient.
    """
    if phase1.dim != phase2.dim:
        raise ValueError("phases must share the same dimension")
    alpha = np.asarray(alpha, dtype=complex)
    beta = np.asarray(beta, dtype=complex)
    if phase1.kind == "quadratic" and phase2.kind == "quadratic":
        _, gb = phase1.grads(alpha, 0.5 * (alpha + beta))
        ga, _ = phase2.grads(0.5 * (alpha + beta), beta)
        _, _, C1 = phase1.hessians(alpha, beta)
        A2, _, _ = phase2.hessians(alpha, beta)
        F = C1 + A2
        if np.linalg.cond(F) > 1e12:
            raise SolverError("singular mixed Hessian in exact composition")
        gamma = 0.5 * (alpha + beta) - np.linalg.solve(F, gb + ga)
        return complex(phase1.value(alpha, gamma) + phase2.value(gamma, beta))
    gamma = 0.5 * (alpha + beta)
    for it in range(50):
        _, gb = phase1.grads(alpha, gamma)
        ga, _ = phase2.grads(gamma, beta)
        g = gb + ga
        if np.linalg.norm(g) <= tol:
            break
        _, _, C1 = phase1.hessians(alpha, gamma)
        A2, _, _ = phase2.hessians(gamma, beta)
        F = C1 + A2
        if np.linalg.cond(F) > 1e12:
            raise SolverError("singular mixed Hessian")
        gamma = gamma - np.linalg.solve(F, g)
    else:
        raise SolverError("mixed critical point: no convergence")
    return complex(phase1.value(alpha, gamma) + phase2.value(gamma, beta))


def multistart_uniqueness(phase: PhaseFunction, alpha, beta, nstarts: int = 20,
                          radius: float = 0.3, seed: int = 0, tol: float = 1e-12) -> float:
    """Largest pairwise distance between Newton limits from scattered complex starts."""
    alpha = np.asarray(alpha, dtype=complex)
    beta = np.asarray(beta, dtype=complex)
    rng = np.random.default_rng(seed)
    m = phase.dim
    base = 0.5 * (alpha + beta)
    limits = []
    for _ in range(nstarts):
        start = base + radius * (rng.uniform(-1, 1, m) + 1j * rng.uniform(-1, 1, m))
        gamma = start
        for _ in range(80):
            g = _gradient(phase, alpha, beta, gamma)
            if np.linalg.norm(g) <= tol:
                break
            _, _, Cblk = phase.hessians(alpha, gamma)
            Ablk, _, _ = phase.hessians(gamma, beta)
            gamma = gamma - np.linalg.solve(Cblk + Ablk, g)
        else:
            continue
        limits.append(gamma)
    if len(limits) < 2:
        raise SolverError("multistart: fewer than two converged runs")
    worst = 0.0
    for i in range(len(limits)):
        for j in range(i + 1, len(limits)):
            worst = max(worst, float(np.linalg.norm(limits[i] - limits[j])))
    return worst
