"""Batch command-line front-end: load specs, run check suites, emit JSON
reports and exit codes.

Subcommands: check, geometry, critical, project, sweep, models, symplin.
Exit codes: 0 all checks passed, 1 some check failed, 2 usage or IO error.

Reports are deterministic: same inputs and seed give byte-identical JSON on
stdout (wall time goes to stderr, never into the JSON payload).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

import numpy as np

from . import critical, geometry, operator_num, phase_core, symplin
from .errors import PhaseLabError, SpecFormatError


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _round_floats(obj, digits: int = 12):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        if obj != obj or obj in (float("inf"), float("-inf")):
            return repr(obj)
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _round_floats(obj.real), "im": _round_floats(obj.imag)}
    if isinstance(obj, np.ndarray):
        return [_round_floats(v, digits) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {k: _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, digits) for v in obj]
    return obj


def _load_phase(path: str):
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise SpecFormatError(f"cannot read phase file '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SpecFormatError(f"phase file '{path}' is not valid JSON: {exc}") from exc
    return phase_core.phase_from_jsonable(spec), spec


def _digest(spec) -> str:
    return hashlib.sha256(_canonical_json(spec).encode()).hexdigest()[:16]


def _emit(report: dict, args) -> int:
    ok = report.get("overall", {}).get("pass", False)
    payload = _round_floats(report)
    text = _canonical_json(payload) if args.json else json.dumps(payload, indent=2,
                                                                 sort_keys=True)
    print(text)
    if args.emit_report:
        with open(args.emit_report, "w") as fh:
            fh.write(_canonical_json(payload))
    return 0 if ok else 1


def _overall(entries: dict) -> dict:
    entries["overall"] = {
        "pass": all(v.get("pass", True) for k, v in entries.items()
                    if isinstance(v, dict) and k != "overall")
    }
    return entries


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_models(args) -> int:
    if args.model == "bargmann":
        phase = phase_core.make_bargmann(args.n)
    elif args.model in ("fubini_study", "fubini-study", "fs"):
        phase = phase_core.make_fubini_study(args.n)
    elif args.model == "scrambled":
        phase = phase_core.random_quadratic_projector_phase(args.seed, args.n, args.scramble)
    else:
        raise SpecFormatError(f"unknown model '{args.model}'")
    spec = phase_core.phase_to_jsonable(phase)
    text = _canonical_json(_round_floats(spec))
    if args.emit:
        with open(args.emit, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


def cmd_check(args) -> int:
    phase, spec = _load_phase(args.phase)
    basepoint = np.zeros(phase.dim)
    jet = phase_core.jet_at(phase, basepoint)
    report = geometry.check_projector_jet(jet, tol=args.tol)
    basics = phase_core.verify_phase_basics(phase, seed=args.seed)
    for k, v in basics.items():
        report[f"phase_{k}"] = v
    report = _overall({k: v for k, v in report.items() if k != "overall"})
    report["command"] = "check"
    report["inputs_digest"] = _digest(spec)
    return _emit(report, args)


def cmd_geometry(args) -> int:
    phase, spec = _load_phase(args.phase)
    jet = phase_core.jet_at(phase, np.zeros(phase.dim))
    njet, gauge = phase_core.gauge_normalize(jet)
    kd = geometry.kahler_triple(njet)
    m = phase.dim
    report = {}
    report["J_squared_plus_identity"] = _entry(
        float(np.linalg.norm(kd.J @ kd.J + np.eye(m), "fro")), args.tol)
    report["JtD_equals_R"] = _entry(float(np.max(np.abs(kd.J.T @ kd.D - kd.R))), args.tol)
    report["B_factorization"] = _entry(
        float(np.max(np.abs(kd.B - kd.L @ (kd.Jt - 1j * np.eye(m)) @ kd.L))), args.tol)
    tm = geometry.tangent_models(njet)
    dims = tm.dims()
    n = phase.n
    report["tangent_dimensions"] = {
        "residual": 0.0 if dims == {"J_phi": 3 * n, "J_phi_star": 3 * n, "Sigma": 2 * n,
                                    "F_phi": n, "F_phi_star": n} else 1.0,
        "tol": 0.0, "pass": dims["J_phi"] == 3 * n and dims["F_phi"] == n,
        "dims": dims,
    }
    leaf = geometry.positivity_leaf(njet)
    report["leaf_positivity"] = {"residual": -leaf["min_eigenvalue"], "tol": 0.0,
                                 "pass": leaf["pass"],
                                 "eigenvalues": leaf["eigenvalues"]}
    report = _overall(report)
    report["command"] = "geometry"
    report["inputs_digest"] = _digest(spec)
    return _emit(report, args)


def _entry(residual: float, tol: float) -> dict:
    return {"residual": residual, "tol": tol, "pass": bool(residual <= tol)}


def cmd_critical(args) -> int:
    phase, spec = _load_phase(args.phase)
    rng = np.random.default_rng(args.seed)
    m = phase.dim
    box = float(min(np.min(phase.domain.box), 1.0))
    worst = {"reproducing": 0.0, "gradient_identities": 0.0, "associativity": 0.0}
    for _ in range(args.samples):
        a = rng.uniform(-0.4, 0.4, m) * box
        b = a + rng.uniform(-0.25, 0.25, m) * box
        worst["reproducing"] = max(worst["reproducing"],
                                   critical.reproducing_residual(phase, a, b))
        worst["gradient_identities"] = max(worst["gradient_identities"],
                                           max(critical.d_critique_residual(phase, a, b)))
        worst["associativity"] = max(worst["associativity"],
                                     critical.associativity_residual(phase, a, b))
    report = {k: _entry(v, args.tol) for k, v in worst.items()}
    report = _overall(report)
    report["command"] = "critical"
    report["samples"] = args.samples
    report["inputs_digest"] = _digest(spec)
    return _emit(report, args)


def _resolve_grid(args, h: float):
    if args.grid in (None, "auto"):
        return operator_num.auto_spacing(h), operator_num.auto_window(h)
    return float(args.grid), operator_num.auto_window(h)


def cmd_project(args) -> int:
    phase, spec = _load_phase(args.phase)
    h = args.h
    spacing, window = _resolve_grid(args, h)
    if args.packet:
        with open(args.packet) as fh:
            packet = operator_num.packet_from_jsonable(json.load(fh))
    else:
        x0 = np.zeros(phase.dim)
        jet = phase_core.jet_at(phase, x0)
        xi0 = np.real(jet.theta())
        box = float(min(np.min(phase.domain.box), 0.9))
        packet = operator_num.coherent_packet(x0, xi0, h, width=2.0, box_half=box)
    if phase.kind == "fubini_study":
        K = operator_num.fs_order0_kernel(h)
    elif phase.kind == "quadratic":
        from .gauss_calc import kernel_from_phase

        K = operator_num.quad_kernel_from_gaussian(kernel_from_phase(phase, h))
    else:
        raise SpecFormatError("project supports quadratic and fubini_study phases")
    defect = operator_num.idempotence_residual(K, packet, spacing=spacing, window=0.0)
    report = _overall({"idempotence_defect": _entry(defect, args.tol)})
    report["command"] = "project"
    report["resolved"] = {"h": h, "spacing": spacing, "window": window, "tol": args.tol}
    report["inputs_digest"] = _digest(spec)
    return _emit(report, args)


def cmd_sweep(args) -> int:
    phase, spec = _load_phase(args.phase)
    if phase.kind != "fubini_study":
        raise SpecFormatError("sweep is defined for the fubini_study phase")
    h_list = [float(x) for x in args.h_list.split(",")]
    packet = lambda h: operator_num.coherent_packet(  # noqa: E731
        np.zeros(2), np.zeros(2), h, width=2.0, box_half=0.9)
    if args.amp_order == 0:
        family = operator_num.fs_order0_kernel
        lo_, hi_ = 0.7, 1.3
    else:
        kappa = operator_num.fs_diagonal_transport_ratio(0.0)
        family = lambda h: operator_num.fs_order1_kernel(h, 0.0, kappa=kappa)  # noqa: E731
        lo_, hi_ = 1.6, 2.4
    sweep = operator_num.h_sweep_decay(family, packet, h_list)
    ok = (sweep["regime"] == "polynomial" and sweep["slope"] is not None
          and lo_ <= sweep["slope"] <= hi_)
    report = _overall({"slope_window": {"residual": sweep["slope"] or 0.0,
                                        "tol": hi_, "pass": bool(ok)}})
    report.update(sweep)
    report["command"] = "sweep"
    report["amp_order"] = args.amp_order
    report["resolved"] = {"grid": "auto", "spacing_rule": "sqrt(h)/4", "window_factor": 3}
    report["inputs_digest"] = _digest(spec)
    return _emit(report, args)


def cmd_symplin(args) -> int:
    rng = np.random.default_rng(args.seed)
    n = args.n
    report = {}
    worst_flatten = 0.0
    worst_sympl = 0.0
    from scipy.linalg import expm

    for _ in range(args.samples):
        N = 2 * n
        Om = symplin.standard_form(N)
        sym = rng.normal(size=(2 * N, 2 * N))
        sym = 0.5 * (sym + sym.T)
        S = expm(0.4 * Om @ sym)
        Jf, Jsf, Sf = symplin._flat_triple(N, n)
        J = symplin.map_subspace(S, Jf)
        Js = symplin.map_subspace(S, Jsf)
        Sg = symplin.map_subspace(S, Sf)
        M = symplin.flatten_pair(J, Js, Sg)
        worst_sympl = max(worst_sympl, symplin.symplectic_defect(M))
        for V, target in ((J, Jf), (Js, Jsf), (Sg, Sf)):
            img = symplin.map_subspace(M, V)
            worst_flatten = max(worst_flatten, symplin.angle_defect(img, target))
    report["flatten_roundtrip"] = _entry(worst_flatten, 1e-9)
    report["symplectic_defect"] = _entry(worst_sympl, 1e-10)

    jet = phase_core.jet_at(phase_core.make_bargmann(n), np.zeros(2 * n))
    tm = geometry.tangent_models(jet)
    TJ = symplin.LinearSubspace(tm.J_phi)
    TJs = symplin.LinearSubspace(tm.J_phi_star)
    rel = symplin.lambda_from_pair(TJ, TJs)
    comp = symplin.relation_compose(rel, rel)
    ang = symplin.angle_defect(comp.space, rel.space) if comp.dim == rel.dim else 1.0
    report["lambda_idempotent"] = _entry(ang, 1e-10)
    adj = symplin.relation_adjoint(rel)
    ang2 = symplin.angle_defect(adj.space, rel.space)
    report["lambda_self_adjoint"] = _entry(ang2, 1e-10)
    report = _overall(report)
    report["command"] = "symplin"
    return _emit(report, args)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phaselab",
                                description="reproducing-phase verification toolkit")
    out_flags = argparse.ArgumentParser(add_help=False)
    out_flags.add_argument("--json", action="store_true",
                           help="compact canonical JSON on stdout")
    out_flags.add_argument("--emit-report", metavar="FILE",
                           help="also write the JSON report here")
    sub = p.add_subparsers(dest="command", required=True,
                           parser_class=lambda **kw: argparse.ArgumentParser(
                               parents=[out_flags], **kw))

    m = sub.add_parser("models", help="emit a builtin phase spec")
    m.add_argument("model", choices=["bargmann", "fubini_study", "fubini-study", "fs",
                                     "scrambled"])
    m.add_argument("--n", type=int, default=1)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--scramble", default="general-linear",
                   choices=["general-linear", "symplectic"])
    m.add_argument("--emit", metavar="FILE")
    m.set_defaults(func=cmd_models)

    def common(sp, tol_default=1e-8):
        sp.add_argument("phase", metavar="PHASE_FILE")
        sp.add_argument("--tol", type=float, default=tol_default)
        sp.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("check", help="axioms and structural residuals at jet level")
    common(c)
    c.set_defaults(func=cmd_check)

    g = sub.add_parser("geometry", help="geometric package identities")
    common(g, 1e-10)
    g.set_defaults(func=cmd_geometry)

    cr = sub.add_parser("critical", help="critical-point identities on sampled pairs")
    common(cr, 1e-9)
    cr.add_argument("--samples", type=int, default=20)
    cr.set_defaults(func=cmd_critical)

    pr = sub.add_parser("project", help="quadrature idempotence defect")
    common(pr, 1e-6)
    pr.add_argument("--h", type=float, default=0.05)
    pr.add_argument("--packet", metavar="FILE")
    pr.add_argument("--grid", default="auto")
    pr.set_defaults(func=cmd_project)

    sw = sub.add_parser("sweep", help="transport-order h sweep")
    common(sw)
    sw.add_argument("--h-list", default="0.2,0.1,0.05,0.025")
    sw.add_argument("--grid", default="auto")
    sw.add_argument("--amp-order", type=int, default=0, choices=[0, 1])
    sw.set_defaults(func=cmd_sweep)

    sy = sub.add_parser("symplin", help="linear symplectic suite")
    sy.add_argument("--n", type=int, default=1)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--samples", type=int, default=10)
    sy.set_defaults(func=cmd_symplin)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    t0 = time.time()
    try:
        rc = args.func(args)
    except SpecFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PhaseLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wall time: {time.time() - t0:.3f} s", file=sys.stderr)
    return rc


if __name__ == "__main__":
    sys.exit(main())
