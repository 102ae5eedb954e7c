"""Linear complex symplectic geometry: subspace predicates, canonical
relations, flattening of coisotropic pairs, and positivity.

Conventions (fixed once, used everywhere):

* ambient space C^(2N) with coordinates ordered (x_1..x_N, xi_1..xi_N);
* the standard form is the matrix OMEGA = [[0, -I], [I, 0]] acting as
  omega(u, v) = u^T OMEGA v, i.e. omega(e_xi_j, e_x_k) = +delta_jk;
* a flat coisotropic triple with parameter p splits x = (x, x') and
  xi = (xi, xi'), with

      J_p     = {(x, x', xi, 0 )},
      J_p^*   = {(x, 0,  xi, xi')},
      Sigma_p = {(x, 0,  xi, 0 )};

* positivity of a leaf/tangent direction w is the positive sign of the
  Hermitian form  E(w) = (1/i) * omega(w, conj(w)).  With this sign the leaf
  form of a reproducing phase equals 2 <Im(A) u, conj(u)> > 0.  (The source
  material uses both signs in different displays; this one is pinned.)

Subspace equality is always decided through principal angles (SVD of the
orthonormalized cross-Gram), threshold 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import TransversalityError

ANGLE_TOL = 1e-9
RANK_RTOL = 1e-10


def standard_form(N: int) -> np.ndarray:
    """Matrix of the standard symplectic form on C^(2N), ordering (x, xi)."""
    Z = np.zeros((N, N))
    I = np.eye(N)
    return np.block([[Z, -I], [I, Z]])


def interleaved_to_split(N: int) -> np.ndarray:
    """Permutation P with v_split = P v_interleaved, (x1, xi1, x2, xi2, ...) order."""
    P = np.zeros((2 * N, 2 * N))
    for j in range(N):
        P[j, 2 * j] = 1.0
        P[N + j, 2 * j + 1] = 1.0
    return P


# ---------------------------------------------------------------------------
# subspaces
# ---------------------------------------------------------------------------


def _orth(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.shape[1] == 0:
        return M
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0:
        return M[:, :0]
    rank = int(np.sum(s > rtol * s[0]))
    return u[:, :rank]


def _nullspace(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    u, s, vh = np.linalg.svd(M)
    if s.size == 0 or s[0] == 0:
        return np.eye(M.shape[1], dtype=complex)
    rank = int(np.sum(s > rtol * s[0]))
    return vh[rank:].conj().T


@dataclass(frozen=True)
class LinearSubspace:
    """Complex subspace of C^(2N) given by a full-column-rank basis matrix."""

    basis: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.basis, dtype=complex))
        if B.shape[1] > 0:
            s = np.linalg.svd(B, compute_uv=False)
            if s[-1] <= 1e-10 * s[0]:
                raise ValueError("basis is rank deficient")
        object.__setattr__(self, "basis", B)

    @property
    def ambient(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def orthonormal(self) -> np.ndarray:
        return _orth(self.basis)

    def contains_defect(self, other: "LinearSubspace") -> float:
        """sin of the largest principal angle between `other` and its projection."""
        Q = self.orthonormal()
        V = other.orthonormal() if isinstance(other, LinearSubspace) else _orth(other)
        if V.shape[1] == 0:
            return 0.0
        resid = V - Q @ (Q.conj().T @ V)
        return float(np.linalg.norm(resid, 2))

    def equals(self, other: "LinearSubspace", tol: float = ANGLE_TOL) -> bool:
        if self.dim != other.dim:
            return False
        return max(self.contains_defect(other), other.contains_defect(self)) <= tol


def subspace(columns) -> LinearSubspace:
    return LinearSubspace(np.column_stack([np.asarray(c, dtype=complex) for c in columns]))


def principal_angles(V: LinearSubspace, W: LinearSubspace) -> np.ndarray:
    s = np.linalg.svd(V.orthonormal().conj().T @ W.orthonormal(), compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


def angle_defect(V: LinearSubspace, W: LinearSubspace) -> float:
    """max sin of the principal angles, computed stably for near-equal spaces."""
    return max(V.contains_defect(W), W.contains_defect(V))


def intersect(V: LinearSubspace, W: LinearSubspace) -> LinearSubspace:
    """Subspace intersection via the nullspace of the stacked coefficient map."""
    null = _nullspace(np.hstack([V.basis, -W.basis]))
    cols = V.basis @ null[: V.dim]
    return LinearSubspace(_orth(cols)) if cols.shape[1] else LinearSubspace(cols)


def real_points(V: LinearSubspace) -> np.ndarray:
    """Orthonormal real basis of the real vectors contained in V."""
    Q = V.orthonormal()
    K = np.eye(V.ambient) - Q @ Q.conj().T
    stacked = np.vstack([K.real, K.imag])
    u, s, vh = np.linalg.svd(stacked)
    if s.size == 0 or s[0] == 0:
        return np.eye(V.ambient)
    rank = int(np.sum(s > 1e-10 * s[0]))
    return vh[rank:].T


def is_conjugation_stable(V: LinearSubspace, tol: float = ANGLE_TOL) -> bool:
    return V.equals(LinearSubspace(np.conj(V.basis)), tol)


# ---------------------------------------------------------------------------
# symplectic operations
# ---------------------------------------------------------------------------


def symplectic_orthogonal(V: LinearSubspace) -> LinearSubspace:
    """V^perp for the standard form: dim V^perp = 2N - dim V."""
    Omega = standard_form(V.ambient // 2)
    return LinearSubspace(_nullspace(V.basis.T @ Omega))


def is_involutive(V: LinearSubspace, tol: float = 1e-9):
    """(involutive?, containment defect of V^perp inside V)."""
    defect = V.contains_defect(symplectic_orthogonal(V))
    return defect <= tol, defect


def is_lagrangian(V: LinearSubspace, tol: float = 1e-9):
    inv, defect = is_involutive(V, tol)
    return inv and 2 * V.dim == V.ambient, defect


def omega_gram(V: LinearSubspace) -> np.ndarray:
    Omega = standard_form(V.ambient // 2)
    return V.basis.T @ Omega @ V.basis


def null_directions(V: LinearSubspace) -> LinearSubspace:
    """ker(omega restricted to V): the leaf directions of a coisotropic V."""
    null = _nullspace(omega_gram(V))
    cols = V.basis @ null
    return LinearSubspace(_orth(cols)) if cols.shape[1] else LinearSubspace(cols)


def _energy_matrix(B: np.ndarray, Omega: np.ndarray) -> np.ndarray:
    """Hermitian M with (1/i) omega(B c, conj(B c)) = c^* M c."""
    M = ((B.T @ Omega @ np.conj(B)) / 1j).T
    return 0.5 * (M + M.conj().T)


def positivity_form(V: LinearSubspace) -> np.ndarray:
    """Hermitian matrix of E(w) = (1/i) omega(w, conj(w)) on the basis of V."""
    return _energy_matrix(V.orthonormal(), standard_form(V.ambient // 2))


def positivity_eigenvalues(V: LinearSubspace) -> np.ndarray:
    return np.linalg.eigvalsh(positivity_form(V))


# ---------------------------------------------------------------------------
# relations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearRelation:
    """Subspace of C^(2N) x C^(2N'), carrying the twisted form omega (-) omega'."""

    left_ambient: int
    right_ambient: int
    space: LinearSubspace

    @property
    def dim(self) -> int:
        return self.space.dim

    def twisted_form(self) -> np.ndarray:
        O1 = standard_form(self.left_ambient // 2)
        O2 = standard_form(self.right_ambient // 2)
        Z = np.zeros((self.left_ambient, self.right_ambient))
        return np.block([[O1, Z], [Z.T, -O2]])

    def is_lagrangian(self, tol: float = 1e-9):
        B = self.space.orthonormal()
        gram = B.T @ self.twisted_form() @ B
        iso_defect = float(np.linalg.norm(gram, 2))
        half = (self.left_ambient + self.right_ambient) // 2
        return iso_defect <= tol and self.dim == half, iso_defect


def relation_from_graph(M: np.ndarray) -> LinearRelation:
    """Relation {(M v, v)}: the graph of the linear map M, right-to-left."""
    M = np.asarray(M, dtype=complex)
    k = M.shape[1]
    return LinearRelation(M.shape[0], k, LinearSubspace(np.vstack([M, np.eye(k)])))


def relation_compose(rel1: LinearRelation, rel2: LinearRelation) -> LinearRelation:
    """Set-theoretic composition {(a, c) : exists b, (a, b) in rel1, (b, c) in rel2}."""
    if rel1.right_ambient != rel2.left_ambient:
        raise ValueError("middle dimensions do not match")
    B1, B2 = rel1.space.basis, rel2.space.basis
    la, mid = rel1.left_ambient, rel1.right_ambient
    rc = rel2.right_ambient
    null = _nullspace(np.hstack([B1[la:, :], -B2[:mid, :]]))
    cols = np.vstack([B1[:la, :] @ null[: B1.shape[1]], B2[mid:, :] @ null[B1.shape[1] :]])
    cols = _orth(cols)
    return LinearRelation(la, rc, LinearSubspace(cols))


def relation_adjoint(rel: LinearRelation) -> LinearRelation:
    """{(conj(b), conj(a)) : (a, b) in rel}; an exact involution."""
    B = rel.space.basis
    la = rel.left_ambient
    return LinearRelation(rel.right_ambient, rel.left_ambient,
                          LinearSubspace(np.vstack([np.conj(B[la:, :]), np.conj(B[:la, :])])))


def lambda_from_pair(J: LinearSubspace, Jstar: LinearSubspace) -> LinearRelation:
    """Lagrangian relation spanned by (F, 0), (0, F*) and the Sigma diagonal.

    Requires the transverse-pair structure: Sigma = J cap J* symplectic of the
    complementary dimension.
    """
    N2 = J.ambient
    Sigma = intersect(J, Jstar)
    p = N2 - J.dim
    if Jstar.dim != J.dim or Sigma.dim != N2 - 2 * p:
        raise TransversalityError(
            f"pair is not transverse: dim(J cap J*) = {Sigma.dim}, expected {N2 - 2 * p}"
        )
    gram = omega_gram(Sigma)
    s = np.linalg.svd(gram, compute_uv=False)
    if s.size and s[-1] <= 1e-10 * max(s[0], 1.0):
        raise TransversalityError("J cap J* is not symplectic")
    F = null_directions(J)
    Fs = null_directions(Jstar)
    Z = np.zeros((N2, F.dim))
    Zs = np.zeros((N2, Fs.dim))
    cols = np.hstack([
        np.vstack([F.basis, Z]),
        np.vstack([Zs, Fs.basis]),
        np.vstack([Sigma.basis, Sigma.basis]),
    ])
    return LinearRelation(N2, N2, LinearSubspace(_orth(cols)))


# ---------------------------------------------------------------------------
# Darboux bases and flattening
# ---------------------------------------------------------------------------


def symplectic_gram_schmidt(columns: np.ndarray, real: bool = False) -> tuple:
    """Darboux basis (E, F) of the span: omega(E_i, F_j) = -delta_ij, rest zero.

    The sign matches the ambient pairing omega(e_x_i, e_xi_j) = -delta_ij, so
    [E | F] can sit directly in the (x, xi) column slots of a symplectic matrix.
    """
    cols = np.asarray(columns, dtype=complex if not real else float)
    N2 = cols.shape[0]
    Omega = standard_form(N2 // 2)
    work = [cols[:, j] for j in range(cols.shape[1])]
    Es, Fs = [], []
    while work:
        e = work.pop(0)
        nrm = np.linalg.norm(e)
        if nrm < 1e-12:
            continue
        e = e / nrm
        pairings = [abs(e @ Omega @ w) for w in work]
        if not pairings or max(pairings) < 1e-12:
            raise ValueError("span is degenerate for the symplectic form")
        k = int(np.argmax(pairings))
        f = work.pop(k)
        f = f / (-(e @ Omega @ f))
        new_work = []
        for w in work:
            w = w - (w @ Omega @ f) / (e @ Omega @ f) * e - (e @ Omega @ w) / (e @ Omega @ f) * f
            if np.linalg.norm(w) > 1e-12:
                new_work.append(w)
        work = new_work
        Es.append(e)
        Fs.append(f)
    E = np.column_stack(Es) if Es else cols[:, :0]
    F = np.column_stack(Fs) if Fs else cols[:, :0]
    return E, F


def _flat_triple(N: int, p: int):
    """Bases of the flat (J_p, J_p^*, Sigma_p) in C^(2N)."""
    I = np.eye(2 * N, dtype=complex)
    x = [I[:, j] for j in range(N - p)]
    xp = [I[:, N - p + j] for j in range(p)]
    xi = [I[:, N + j] for j in range(N - p)]
    xip = [I[:, 2 * N - p + j] for j in range(p)]
    J = subspace(x + xp + xi)
    Js = subspace(x + xi + xip)
    Sigma = subspace(x + xi) if N > p else LinearSubspace(np.zeros((2 * N, 0)))
    return J, Js, Sigma


def flat_positive_model(N: int, p: int) -> LinearSubspace:
    """{(x, x', xi, i x')}: the target of the positive normal form."""
    I = np.eye(2 * N, dtype=complex)
    cols = [I[:, j] for j in range(N - p)]
    cols += [I[:, N - p + j] + 1j * I[:, 2 * N - p + j] for j in range(p)]
    cols += [I[:, N + j] for j in range(N - p)]
    return subspace(cols)


def flatten_pair(J: LinearSubspace, Jstar: LinearSubspace, Sigma: LinearSubspace,
                 real_sigma: bool | None = None) -> np.ndarray:
    """Symplectic matrix M mapping (J, J*, Sigma) onto the flat triple.

    M^T Omega M = Omega to 1e-10 and M J = J_p etc. (principal angles below
    1e-9).  When Sigma is conjugation-stable (detected, or forced with
    real_sigma=True) the Sigma part of the basis is real, so M maps real
    points of Sigma to real points.
    """
    N2 = J.ambient
    N = N2 // 2
    p = N2 - J.dim
    Jf, Jsf, Sf = _flat_triple(N, p)
    if J.equals(Jf) and Jstar.equals(Jsf) and Sigma.equals(Sf):
        return np.eye(N2, dtype=complex)
    if Sigma.dim != N2 - 2 * p or Jstar.dim != J.dim:
        raise TransversalityError("triple has inconsistent dimensions")

    if real_sigma is None:
        real_sigma = is_conjugation_stable(Sigma)
    if real_sigma:
        SR = real_points(Sigma)
        if SR.shape[1] != Sigma.dim:
            raise TransversalityError("Sigma is not the complexification of its real points")
        E, Fcols = symplectic_gram_schmidt(SR, real=True)
        E = E.astype(complex)
        Fcols = Fcols.astype(complex)
    else:
        E, Fcols = symplectic_gram_schmidt(Sigma.basis)

    F = null_directions(J)
    Fs = null_directions(Jstar)
    if F.dim != p or Fs.dim != p:
        raise TransversalityError("null foliations have unexpected dimension")
    Omega = standard_form(N)
    P = F.basis.T @ Omega @ Fs.basis
    s = np.linalg.svd(P, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise TransversalityError("leaf pairing is degenerate")
    G = Fs.basis @ (-np.linalg.inv(P).T)

    M_basis = np.hstack([E, F.basis, Fcols, G])
    return np.linalg.inv(M_basis)


def symplectic_defect(M: np.ndarray) -> float:
    N = M.shape[0] // 2
    Omega = standard_form(N)
    return float(np.max(np.abs(M.T @ Omega @ M - Omega)))


def map_subspace(M: np.ndarray, V: LinearSubspace) -> LinearSubspace:
    return LinearSubspace(_orth(M @ V.basis))


# ---------------------------------------------------------------------------
# positive normal form
# ---------------------------------------------------------------------------


def _graph_matrix_over_block(F: LinearSubspace, N: int, p: int) -> np.ndarray:
    """W with F = {(0, a, 0, W a)} inside flat coordinates; W symmetric, Im W > 0."""
    B = F.basis
    head = np.vstack([B[: N - p, :], B[N : 2 * N - p, :]])
    if np.max(np.abs(head)) > 1e-8 * max(np.max(np.abs(B)), 1.0):
        raise TransversalityError("leaf directions do not lie over the (x', xi') block")
    a = B[N - p : N, :]
    b = B[2 * N - p :, :]
    if np.linalg.cond(a) > 1e10:
        raise TransversalityError("leaf is not a graph over x' (degenerate positivity)")
    W = b @ np.linalg.inv(a)
    return 0.5 * (W + W.T)


def positive_normal_form(J: LinearSubspace, Sigma: LinearSubspace) -> np.ndarray:
    """Real symplectic M mapping a strictly positive J (with J_R = Sigma_R)
    onto the flat positive model {(x, x', xi, i x')}.

    Construction: flatten Sigma by a real Darboux basis, read off the leaf
    graph W (symmetric, Im W > 0), interpolate W_t = (1 - t) W + t iI, and
    integrate the induced linear Hamiltonian flow, which is real because the
    generator solves the reality-constrained transport of the interpolation.
    """
    N2 = J.ambient
    N = N2 // 2
    p = N2 - J.dim
    if not is_conjugation_stable(Sigma):
        raise TransversalityError("Sigma must be conjugation-stable")
    SR = real_points(Sigma)
    if SR.shape[1] != Sigma.dim:
        raise TransversalityError("Sigma is not the complexification of a real subspace")

    if Sigma.dim > 0:
        E, Fc = symplectic_gram_schmidt(SR, real=True)
    else:
        E = Fc = np.zeros((N2, 0))
    # complete with a real Darboux basis of the symplectic complement
    span = np.hstack([E, Fc]).astype(float) if Sigma.dim else np.zeros((N2, 0))
    Omega = standard_form(N)
    if Sigma.dim:
        comp = _nullspace(np.hstack([span]).T @ Omega)
        comp = np.real_if_close(comp)
        comp = _real_basis(comp)
    else:
        comp = np.eye(N2)
    E2, F2 = symplectic_gram_schmidt(comp, real=True)
    M0 = np.linalg.inv(np.hstack([E, E2, Fc, F2]).astype(complex))

    Jf = map_subspace(M0, J)
    F = null_directions(Jf)
    W = _graph_matrix_over_block(F, N, p)
    T0 = W.imag.copy()
    S0 = W.real.copy()
    if np.min(np.linalg.eigvalsh(T0)) <= 0:
        raise TransversalityError("J is not strictly positive over Sigma")

    Tdot = np.eye(p) - T0

    def rhs(t, y):
        Phi = y.reshape(2 * p, 2 * p)
        Tt = (1 - t) * T0 + t * np.eye(p)
        St = (1 - t) * S0
        beta = -0.5 * Tdot @ np.linalg.inv(Tt)
        alpha = S0 - beta @ St - St @ beta.T
        H = np.block([[beta.T, np.zeros((p, p))], [-alpha, -beta]])
        return (H @ Phi).ravel()

    sol = solve_ivp(rhs, (0.0, 1.0), np.eye(2 * p).ravel(), method="DOP853",
                    rtol=1e-12, atol=1e-14, dense_output=False)
    if not sol.success:
        raise RuntimeError(f"normal-form flow integration failed: {sol.message}")
    Phi1 = sol.y[:, -1].reshape(2 * p, 2 * p)

    M1 = np.eye(N2, dtype=complex)
    idx = list(range(N - p, N)) + list(range(2 * N - p, 2 * N))
    M1[np.ix_(idx, idx)] = Phi1
    return M1 @ M0


def _real_basis(cols: np.ndarray) -> np.ndarray:
    """Real orthonormal basis of the real span of Re/Im parts of the columns."""
    stacked = np.hstack([cols.real, cols.imag])
    u, s, _ = np.linalg.svd(stacked, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return stacked[:, :0]
    rank = int(np.sum(s > 1e-10 * s[0]))
    return u[:, :rank]


# ---------------------------------------------------------------------------
# pair positivity
# ---------------------------------------------------------------------------


def pair_positivity_check(J: LinearSubspace, Jstar: LinearSubspace, tol: float = 1e-9) -> dict:
    """Leaf positivity of J and conj(J*), positivity of Lambda(J, J*), and the
    consistency flag for the equivalence between the two."""
    F = null_directions(J)
    Fs_conj = LinearSubspace(np.conj(null_directions(Jstar).basis))
    eig_J = positivity_eigenvalues(F)
    eig_Jsc = positivity_eigenvalues(Fs_conj)

    rel = lambda_from_pair(J, Jstar)
    eig_L = np.linalg.eigvalsh(_energy_matrix(rel.space.orthonormal(), rel.twisted_form()))

    sig_dim = rel.dim - F.dim - Fs_conj.dim
    n_zero = int(np.sum(np.abs(eig_L) <= 1e-8))
    n_pos = int(np.sum(eig_L > 1e-8))
    j_pos = bool(eig_J.size and np.min(eig_J) > tol)
    jsc_pos = bool(eig_Jsc.size and np.min(eig_Jsc) > tol)
    lambda_pos = bool(n_zero == sig_dim and n_pos == rel.dim - sig_dim)
    degenerate = bool(np.any(np.abs(eig_J) <= tol) or np.any(np.abs(eig_Jsc) <= tol))
    return {
        "leaf_eigenvalues_J": [float(e) for e in eig_J],
        "leaf_eigenvalues_conj_Jstar": [float(e) for e in eig_Jsc],
        "lambda_eigenvalues": [float(e) for e in eig_L],
        "J_positive": j_pos,
        "conj_Jstar_positive": jsc_pos,
        "lambda_positive": lambda_pos,
        "degenerate": degenerate,
        "iff_consistent": bool(lambda_pos == (j_pos and jsc_pos)),
    }
