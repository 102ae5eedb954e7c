import numpy as np
import pytest

from phaselab import critical, geometry as geo, phase_core as pc


def bargmann_jet(n=1, at=None):
    return pc.jet_at(pc.make_bargmann(n), np.zeros(2 * n) if at is None else at)


class TestKahlerTriple:
    def test_bargmann_values(self):
        kd = geo.kahler_triple(bargmann_jet())
        np.testing.assert_allclose(kd.D, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(kd.R, [[0.0, 1.0], [-1.0, 0.0]], atol=1e-14)
        np.testing.assert_allclose(kd.J, [[0.0, -1.0], [1.0, 0.0]], atol=1e-14)
        np.testing.assert_allclose(kd.J @ kd.J, -np.eye(2), atol=1e-13)

    def test_fs_at_zero_matches_bargmann(self):
        kf = geo.kahler_triple(pc.jet_at(pc.make_fubini_study(1), [0.0, 0.0]))
        kb = geo.kahler_triple(bargmann_jet())
        for f in ("R", "D", "J", "Jt", "L"):
            np.testing.assert_allclose(getattr(kf, f), getattr(kb, f), atol=1e-12)

    def test_model_quadratic_roundtrip(self):
        rng = np.random.default_rng(7)
        # random L symmetric positive, random Jt conjugated from the standard one
        A = rng.normal(size=(2, 2))
        L = 0.1 * (A + A.T) + np.eye(2)
        S = np.eye(2) + 0.3 * rng.normal(size=(2, 2))
        Jt0 = np.array([[0.0, -1.0], [1.0, 0.0]])
        Jt = S @ Jt0 @ np.linalg.inv(S)
        Jt = 0.5 * (Jt - Jt.T)  # keep antisymmetric
        Jt = Jt / np.sqrt(abs(np.linalg.det(Jt)))  # renormalize to Jt^2 = -1 (2x2)
        ph = pc.make_model_quadratic(np.zeros(2), L, Jt)
        kd = geo.kahler_triple(pc.jet_at(ph, [0.0, 0.0]))
        np.testing.assert_allclose(kd.L, L, atol=1e-10)
        np.testing.assert_allclose(kd.Jt, Jt, atol=1e-10)

    def test_rejects_wrong_sign(self):
        # orientation reversal (conjugate phase) flips the sign of Re D
        jet = bargmann_jet()
        flipped = pc.DiagonalJet(basepoint=jet.basepoint, order=2,
                                 coeffs={k: np.conj(c) for k, c in jet.coeffs.items()})
        with pytest.raises(ValueError, match="positive"):
            geo.kahler_triple(flipped)
        rep = geo.check_projector_jet(flipped)
        assert not rep["ReD_positive"]["pass"]


class TestCheckProjectorJet:
    def test_bargmann_passes_tight(self):
        rep = geo.check_projector_jet(bargmann_jet())
        assert rep["overall"]["pass"]
        for k, v in rep.items():
            if k in ("overall", "ReD_positive"):
                continue
            assert v["residual"] < 1e-12

    @pytest.mark.parametrize("n", [1, 2])
    def test_scrambled_pass_100_seeds(self, n):
        for seed in range(100):
            ph = pc.random_quadratic_projector_phase(seed, n)
            rep = geo.check_projector_jet(pc.jet_at(ph, np.zeros(2 * n)))
            assert rep["overall"]["pass"], (seed, n)

    def test_antisymmetric_perturbation_detected(self):
        jet = bargmann_jet()
        eps = 1e-2
        coeffs = dict(jet.coeffs)
        coeffs[((1, 0), (0, 1))] = coeffs.get(((1, 0), (0, 1)), 0.0) + eps
        coeffs[((0, 1), (1, 0))] = coeffs.get(((0, 1), (1, 0)), 0.0) - eps
        bad = pc.DiagonalJet(basepoint=jet.basepoint, order=2, coeffs=coeffs)
        rep = geo.check_projector_jet(bad)
        assert not rep["overall"]["pass"]
        assert rep["J_squared_plus_identity"]["residual"] >= eps / 10


class TestRank:
    def test_bargmann_rank_on_and_off_diagonal(self):
        bs = pc.make_bargmann(1)
        assert geo.rank_cross_hessian(bs, [0.1, 0.1], [0.1, 0.1]) == 1
        assert geo.rank_cross_hessian(bs, [0.0, 0.0], [0.3, 0.0]) == 1

    def test_fs_rank_off_diagonal(self):
        fs = pc.make_fubini_study(1)
        assert geo.rank_cross_hessian(fs, [0.2, 0.0], [0.0, 0.1]) == 1

    @pytest.mark.parametrize("n", [1, 2])
    def test_rank_constant_near_diagonal(self, n):
        rng = np.random.default_rng(3)
        ph = pc.random_quadratic_projector_phase(17, n)
        for _ in range(20):
            a = rng.uniform(-0.3, 0.3, 2 * n)
            b = a + rng.uniform(-0.1, 0.1, 2 * n)
            assert geo.rank_cross_hessian(ph, a, b) == n


class TestTangentModels:
    @pytest.mark.parametrize("n", [1, 2])
    def test_dimensions(self, n):
        for seed in range(5):
            jet = pc.jet_at(pc.random_quadratic_projector_phase(seed, n), np.zeros(2 * n))
            tm = geo.tangent_models(jet)
            assert tm.dims() == {"J_phi": 3 * n, "J_phi_star": 3 * n, "Sigma": 2 * n,
                                 "F_phi": n, "F_phi_star": n}

    def test_containments(self):
        from phaselab.symplin import LinearSubspace

        jet = bargmann_jet(2)
        tm = geo.tangent_models(jet)
        J = LinearSubspace(tm.J_phi)
        Js = LinearSubspace(tm.J_phi_star)
        assert J.contains_defect(LinearSubspace(tm.F_phi)) < 1e-10
        assert Js.contains_defect(LinearSubspace(tm.F_phi_star)) < 1e-10
        assert J.contains_defect(LinearSubspace(tm.Sigma)) < 1e-10
        assert Js.contains_defect(LinearSubspace(tm.Sigma)) < 1e-10

    def test_bargmann_leaf_direction(self):
        # ker B^T is the (1, i) eigard direction of Jt
        tm = geo.tangent_models(bargmann_jet())
        u = tm.F_phi[:2, 0]
        ratio = u[1] / u[0]
        assert abs(ratio - 1j) < 1e-12

    def test_sigma_transverse_to_leaf(self):
        from phaselab.symplin import LinearSubspace, intersect

        tm = geo.tangent_models(bargmann_jet())
        inter = intersect(LinearSubspace(tm.Sigma), LinearSubspace(tm.F_phi))
        assert inter.dim == 0

    def test_cross_kernel_transversality(self):
        # ker(B^T) cap ker(B) = {0}
        for seed in range(5):
            jet = pc.jet_at(pc.random_quadratic_projector_phase(seed, 1), np.zeros(2))
            B = jet.B()
            stacked = np.vstack([B, B.T])
            assert np.linalg.matrix_rank(stacked) == 2


class TestPositivityLeaf:
    def test_bargmann_eigenvalue_one(self):
        rep = geo.positivity_leaf(bargmann_jet())
        assert rep["pass"]
        np.testing.assert_allclose(rep["eigenvalues"], [1.0], atol=1e-12)

    def test_scrambled_all_positive(self):
        for seed in range(20):
            jet, _ = pc.gauge_normalize(
                pc.jet_at(pc.random_quadratic_projector_phase(seed, 1), np.zeros(2)))
            assert geo.positivity_leaf(jet)["pass"]


class TestStructuralIdentities:
    @pytest.mark.parametrize("n", [1, 2])
    def test_kahler_identities(self, n):
        for seed in range(15):
            jet, _ = pc.gauge_normalize(
                pc.jet_at(pc.random_quadratic_projector_phase(seed, n), np.zeros(2 * n)))
            kd = geo.kahler_triple(jet)
            m = 2 * n
            assert np.max(np.abs(kd.J @ kd.J + np.eye(m))) < 1e-10
            assert np.max(np.abs(kd.J.T @ kd.D - kd.R)) < 1e-10
            assert np.max(np.abs(kd.Jt + kd.Jt.T)) < 1e-10
            assert np.max(np.abs(kd.Jt @ kd.Jt + np.eye(m))) < 1e-10
            # metric compatibility g(Ju, Jv) = g(u, v)
            assert np.max(np.abs(kd.J.T @ kd.D @ kd.J - kd.D)) < 1e-10
            # mixed-Hessian factorization
            assert np.max(np.abs(kd.B - kd.L @ (kd.Jt - 1j * np.eye(m)) @ kd.L)) < 1e-10

    def test_quadratic_taylor_lemma(self):
        # order-2 truncation of the disk phase is itself a reproducing phase
        fs = pc.make_fubini_study(1)
        at = np.array([0.15, -0.1])
        jet = pc.jet_at(fs, at)
        assert geo.check_projector_jet(jet)["overall"]["pass"]
        njet, _ = pc.gauge_normalize(jet)
        quad = pc.PhaseFunction(
            kind="quadratic", dim=2, backend=pc.quadratic_from_jet(njet, 1),
            domain=pc._default_domain(2), label="fs-2jet")
        r = critical.reproducing_residual(quad, at + [0.1, 0.05], at + [-0.05, 0.1])
        assert r < 1e-12
