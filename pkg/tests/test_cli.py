import json
import subprocess
import sys

import pytest

from phaselab.cli import main


def run_cli(args, tmp_path=None):
    proc = subprocess.run([sys.executable, "-m", "phaselab.cli", *args],
                          capture_output=True, text=True,
                          cwd=str(tmp_path) if tmp_path else None)
    return proc.returncode, proc.stdout, proc.stderr


@pytest.fixture(scope="module")
def bs_phase(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    rc, _, _ = run_cli(["models", "bargmann", "--n", "1", "--emit", "bs.phase"], d)
    assert rc == 0
    return d


class TestCommands:
    def test_models_then_check_exits_zero(self, bs_phase):
        rc, out, _ = run_cli(["check", "bs.phase", "--json"], bs_phase)
        assert rc == 0
        report = json.loads(out)
        assert report["overall"]["pass"]

    def test_critical_with_seed_and_tol(self, bs_phase):
        rc, out, _ = run_cli(["critical", "bs.phase", "--seed", "7", "--tol", "1e-10",
                              "--json"], bs_phase)
        assert rc == 0
        report = json.loads(out)
        assert report["reproducing"]["residual"] < 1e-10
        assert report["associativity"]["residual"] < 1e-10

    def test_geometry(self, bs_phase):
        rc, out, _ = run_cli(["geometry", "bs.phase", "--json"], bs_phase)
        assert rc == 0
        assert json.loads(out)["overall"]["pass"]

    def test_symplin(self):
        rc, out, _ = run_cli(["symplin", "--n", "1", "--samples", "3", "--json"])
        assert rc == 0
        assert json.loads(out)["overall"]["pass"]

    def test_deterministic_output(self, bs_phase):
        rc1, out1, _ = run_cli(["check", "bs.phase", "--seed", "3", "--json"], bs_phase)
        rc2, out2, _ = run_cli(["check", "bs.phase", "--seed", "3", "--json"], bs_phase)
        assert rc1 == rc2 == 0
        assert out1 == out2  # byte-identical JSON

    def test_malformed_spec_exits_two_and_names_field(self, tmp_path):
        bad = tmp_path / "bad.phase"
        bad.write_text('{"kind": "quadratic", "n": 1}')
        rc, _, err = run_cli(["check", str(bad)])
        assert rc == 2
        assert "'A'" in err

    def test_unreadable_file_exits_two(self):
        rc, _, err = run_cli(["check", "/nonexistent/nowhere.phase"])
        assert rc == 2

    def test_failing_check_exits_one(self, tmp_path):
        # a quadratic phase that satisfies the constructor invariants but has
        # a broken antisymmetric part (J^2 != -1) must fail with exit 1
        import numpy as np

        from phaselab import phase_core as pc

        jet = pc.jet_at(pc.make_bargmann(1), np.zeros(2))
        B = jet.B()
        B = B + np.array([[0.0, 0.05], [-0.05, 0.0]])
        spec = {"kind": "quadratic", "n": 1, "alpha0": [0.0, 0.0], "theta": [0.0, 0.0],
                "A": pc._matrix_to_json(jet.A()), "B": pc._matrix_to_json(B),
                "C": pc._matrix_to_json(jet.C())}
        f = tmp_path / "broken.phase"
        f.write_text(json.dumps(spec))
        rc, out, _ = run_cli(["check", str(f), "--json"])
        assert rc == 1
        report = json.loads(out)
        assert not report["J_squared_plus_identity"]["pass"]

    def test_main_callable_directly(self, bs_phase):
        assert main(["check", str(bs_phase / "bs.phase")]) == 0
