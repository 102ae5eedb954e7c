import numpy as np
import pytest

from phaselab import phase_core as pc
from phaselab._poly import Poly
from phaselab.errors import BranchError, SpecFormatError


def fd_gradients(phase, a, b, eps=1e-6):
    """Central-difference gradient oracle."""
    m = len(a)
    ga = np.zeros(m, dtype=complex)
    gb = np.zeros(m, dtype=complex)
    for i in range(m):
        d = np.zeros(m)
        d[i] = eps
        ga[i] = (phase.value(a + d, b) - phase.value(a - d, b)) / (2 * eps)
        gb[i] = (phase.value(a, b + d) - phase.value(a, b - d)) / (2 * eps)
    return ga, gb


class TestEvalPhase:
    def test_bargmann_diagonal_vanishes(self):
        bs = pc.make_bargmann(1)
        assert abs(bs.value([0.3, -0.2], [0.3, -0.2])) < 1e-12

    def test_bargmann_offdiagonal_value(self):
        # phi((0,0),(1,0)) = Im(0) + (i/2)|0-1|^2 = 0.5i
        bs = pc.make_bargmann(1)
        assert abs(bs.value([0.0, 0.0], [1.0, 0.0]) - 0.5j) < 1e-14

    def test_fubini_study_diagonal(self):
        fs = pc.make_fubini_study(1)
        for p in ([0.0, 0.0], [0.3, 0.1], [-0.5, 0.2]):
            assert abs(fs.value(p, p)) < 1e-14

    def test_eval_phase_orders(self):
        bs = pc.make_bargmann(1)
        ev = pc.eval_phase(bs, [0.1, 0.2], [0.0, -0.1], deriv_order=2)
        assert ev.grad_alpha is not None and ev.hess_ab is not None
        with pytest.raises(ValueError):
            pc.eval_phase(bs, [0, 0], [0, 0], deriv_order=3)

    def test_fs_branch_failure(self):
        fs = pc.make_fubini_study(1)
        # complex arguments driving 1 + z * wbar to zero: z = 1.2, wbar = -1/1.2
        with pytest.raises(BranchError):
            fs.value([0.6, -0.6j], [0.0, -1j / 1.2])

    @pytest.mark.parametrize("seed", range(4))
    def test_fd_agrees_with_exact_gradients(self, seed):
        rng = np.random.default_rng(seed)
        for phase in (pc.make_bargmann(1), pc.make_fubini_study(1),
                      pc.random_quadratic_projector_phase(seed, 1)):
            a = rng.uniform(-0.3, 0.3, 2)
            b = rng.uniform(-0.3, 0.3, 2)
            ga, gb = phase.grads(a, b)
            na, nb = fd_gradients(phase, a, b)
            assert np.max(np.abs(ga - na)) < 1e-8
            assert np.max(np.abs(gb - nb)) < 1e-8


class TestJets:
    def test_quadratic_jet_is_identity(self):
        ph = pc.random_quadratic_projector_phase(5, 1)
        q = ph.backend
        jet = pc.jet_at(ph, q.alpha0)
        np.testing.assert_allclose(jet.A(), q.A, atol=1e-13)
        np.testing.assert_allclose(jet.B(), q.B, atol=1e-13)
        np.testing.assert_allclose(jet.C(), q.C, atol=1e-13)
        np.testing.assert_allclose(jet.theta(), q.theta, atol=1e-13)

    def test_bargmann_jet_blocks(self):
        jet = pc.jet_at(pc.make_bargmann(1), [0.4, -0.7])
        expect_B = np.array([[0.0, -1.0], [1.0, 0.0]]) - 1j * np.eye(2)
        np.testing.assert_allclose(jet.B(), expect_B, atol=1e-13)
        np.testing.assert_allclose(jet.A(), 1j * np.eye(2), atol=1e-13)

    def test_fs_jet_at_zero_equals_bargmann(self):
        jb = pc.jet_at(pc.make_bargmann(1), [0.0, 0.0])
        jf = pc.jet_at(pc.make_fubini_study(1), [0.0, 0.0])
        for blk in ("A", "B", "C"):
            np.testing.assert_allclose(getattr(jf, blk)(), getattr(jb, blk)(), atol=1e-12)

    def test_zero_sum_roundtrip(self):
        for seed in range(6):
            ph = pc.random_quadratic_projector_phase(seed, 2)
            jet = pc.jet_at(ph, np.zeros(4))
            s = jet.A() + jet.B() + jet.B().T + jet.C()
            assert np.max(np.abs(s)) < 1e-13

    def test_diagonal_sum_rule(self):
        jet = pc.jet_at(pc.make_fubini_study(1), [0.2, -0.1])
        assert jet.diagonal_residual() < 1e-12

    def test_self_adjoint_jet_symmetry(self):
        # coefficient(nu_u, nu_v) = -conj(coefficient(nu_v, nu_u))
        for phase in (pc.make_bargmann(2), pc.make_fubini_study(1)):
            jet = pc.jet_at(phase, np.zeros(phase.dim) + 0.05)
            for (ku, kv), c in jet.coeffs.items():
                mirror = jet.coefficient(kv, ku)
                assert abs(c + np.conj(mirror)) < 1e-12


class TestGaugeNormalize:
    def test_bargmann_already_normalized(self):
        jet = pc.jet_at(pc.make_bargmann(1), [0.0, 0.0])
        out, gauge = pc.gauge_normalize(jet)
        assert gauge.is_zero()
        np.testing.assert_allclose(out.A(), jet.A(), atol=1e-14)

    def test_constructed_coboundary_recovered(self):
        # phi + (a_x^2 - b_x^2): gauge Hessian diag(2, 0), jet restored
        bs = pc.make_bargmann(1)
        pert = Poly(4, {(2, 0, 0, 0): 1.0, (0, 0, 2, 0): -1.0})
        ph = pc.perturbed_phase(bs, pert)
        jet = pc.jet_at(ph, np.zeros(2))
        out, gauge = pc.gauge_normalize(jet)
        np.testing.assert_allclose(gauge.hessian, np.diag([2.0, 0.0]), atol=1e-12)
        base = pc.jet_at(bs, np.zeros(2))
        np.testing.assert_allclose(out.A(), base.A(), atol=1e-12)
        np.testing.assert_allclose(out.C(), base.C(), atol=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_output_satisfies_ac_identity(self, seed):
        # A' + C' = 2iD is forced by P' = 0 with D untouched
        ph = pc.random_quadratic_projector_phase(seed, 1)
        jet, _ = pc.gauge_normalize(pc.jet_at(ph, np.zeros(2)))
        D = 0.5j * (jet.B() + jet.B().T)
        np.testing.assert_allclose(jet.A() + jet.C(), 2j * D, atol=1e-12)

    def test_idempotent(self):
        ph = pc.random_quadratic_projector_phase(11, 2)
        jet1, _ = pc.gauge_normalize(pc.jet_at(ph, np.zeros(4)))
        jet2, gauge2 = pc.gauge_normalize(jet1)
        assert gauge2.is_zero(1e-13)


class TestModelBuilders:
    def test_bargmann_n2_block_diagonal(self):
        q = pc.make_bargmann(2).backend
        np.testing.assert_allclose(q.B[:2, 2:], 0, atol=0)
        np.testing.assert_allclose(q.B[2:, :2], 0, atol=0)
        np.testing.assert_allclose(q.B[:2, :2], q.B[2:, 2:], atol=0)

    def test_model_quadratic_reproduces_bargmann(self):
        Jt = np.array([[0.0, -1.0], [1.0, 0.0]])
        ph = pc.make_model_quadratic(np.zeros(2), np.eye(2), Jt)
        jb = pc.jet_at(pc.make_bargmann(1), [0.0, 0.0])
        jm = pc.jet_at(ph, [0.0, 0.0])
        np.testing.assert_allclose(jm.B(), jb.B(), atol=1e-13)

    def test_model_quadratic_rejects_bad_Jt(self):
        bad = np.array([[0.0, -2.0], [2.0, 0.0]])  # squares to -4
        with pytest.raises(ValueError):
            pc.make_model_quadratic(np.zeros(2), np.eye(2), bad)

    def test_theta_shifts_first_order_only(self):
        Jt = np.array([[0.0, -1.0], [1.0, 0.0]])
        p0 = pc.make_model_quadratic(np.zeros(2), np.eye(2), Jt)
        p1 = pc.make_model_quadratic([0.3, -0.2], np.eye(2), Jt)
        j0, j1 = pc.jet_at(p0, [0, 0]), pc.jet_at(p1, [0, 0])
        np.testing.assert_allclose(j1.B(), j0.B(), atol=0)
        np.testing.assert_allclose(j1.theta(), [0.3, -0.2], atol=1e-14)

    def test_scrambled_identity_is_bargmann(self):
        # the conjugation oracle: J' = S^-1 J S computed by direct products
        from phaselab.geometry import kahler_triple

        for seed in range(10):
            ph = pc.random_quadratic_projector_phase(seed, 1)
            S = ph.meta["S"]
            jet, _ = pc.gauge_normalize(pc.jet_at(ph, np.zeros(2)))
            kd = kahler_triple(jet)
            JB = np.array([[0.0, -1.0], [1.0, 0.0]])
            np.testing.assert_allclose(kd.J, np.linalg.solve(S, JB @ S), atol=1e-12)

    def test_scrambled_det_normalization(self):
        for seed in range(5):
            S = pc.random_quadratic_projector_phase(seed, 2).meta["S"]
            assert abs(abs(np.linalg.det(S)) - 1.0) < 1e-12

    def test_symplectic_scramble(self):
        ph = pc.random_quadratic_projector_phase(3, 1, scramble="symplectic")
        S = ph.meta["S"]
        Om = np.array([[0.0, -1.0], [1.0, 0.0]])
        np.testing.assert_allclose(S.T @ Om @ S, Om, atol=1e-12)


class TestJSON:
    def test_roundtrip_builtin(self, tmp_path):
        for phase in (pc.make_bargmann(2), pc.make_fubini_study(1),
                      pc.random_quadratic_projector_phase(4, 1)):
            spec = pc.phase_to_jsonable(phase)
            back = pc.phase_from_jsonable(spec)
            a = np.array([0.2, -0.1] * phase.n)
            b = np.array([0.1, 0.15] * phase.n)
            assert abs(phase.value(a, b) - back.value(a, b)) < 1e-12

    def test_quadratic_roundtrip_values(self):
        ph = pc.random_quadratic_projector_phase(9, 1)
        spec = pc.phase_to_jsonable(ph)
        spec["kind"] = "quadratic"
        q = ph.backend
        spec.update(alpha0=list(q.alpha0), theta=list(q.theta))
        spec["A"] = pc._matrix_to_json(q.A)
        spec["B"] = pc._matrix_to_json(q.B)
        spec["C"] = pc._matrix_to_json(q.C)
        back = pc.phase_from_jsonable(spec)
        assert abs(ph.value([0.1, 0.2], [0.0, 0.1]) - back.value([0.1, 0.2], [0.0, 0.1])) < 1e-12

    def test_errors_name_fields(self):
        with pytest.raises(SpecFormatError, match="kind"):
            pc.phase_from_jsonable({})
        with pytest.raises(SpecFormatError, match="'A'"):
            pc.phase_from_jsonable({"kind": "quadratic", "n": 1})
        with pytest.raises(SpecFormatError, match="seed"):
            pc.phase_from_jsonable({"kind": "scrambled", "n": 1})
        bad = {"kind": "quadratic", "n": 1,
               "A": [[1.0, 0.0]] * 4, "B": [[1.0, 0.0]] * 4, "C": [[1.0, 0.0]] * 4}
        with pytest.raises(SpecFormatError):
            pc.phase_from_jsonable(bad)


class TestInvariants:
    def test_generated_phases_vanish_on_diagonal(self):
        rng = np.random.default_rng(0)
        phases = [pc.make_bargmann(1), pc.make_bargmann(2), pc.make_fubini_study(1)]
        phases += [pc.random_quadratic_projector_phase(s, 1) for s in range(5)]
        for ph in phases:
            box = np.minimum(ph.domain.box, 0.5)
            for _ in range(10):
                a = rng.uniform(-1, 1, ph.dim) * box
                assert abs(ph.value(a, a)) < 1e-12

    def test_self_adjointness_sampled(self):
        rng = np.random.default_rng(1)
        for ph in (pc.make_bargmann(1), pc.make_fubini_study(1)):
            for _ in range(10):
                a = rng.uniform(-0.4, 0.4, ph.dim)
                b = rng.uniform(-0.4, 0.4, ph.dim)
                assert abs(ph.value(a, b) + np.conj(ph.value(b, a))) < 1e-12
