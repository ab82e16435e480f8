"""Command-line front end for reproducible shadowing/stability experiments.

Subcommands: constants, orbit, shadow, verify, stability, probe.  Every run
writes a manifest echoing all resolved parameters (including the derived
constants L0, delta, alpha, r1, r2, k), so any result can be reproduced
from the manifest alone; outputs are line-oriented text or JSON with
17-significant-digit decimals and no timestamps, so identical configs give
byte-identical files.

Exit codes: 0 on PASS, 1 on contract FAIL, 2 on input errors, 3 on
parameter-validity errors (e.g. an epsilon too large for the model's
validity radii).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import models, oracles, orbits, shadowing, stability

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_PARAMETER = 3


def _resolve_model(name_or_path: str) -> models.SkewModel:
    if name_or_path in ("linear", "skew"):
        return models.builtin_model(name_or_path)
    return models.load_model(name_or_path)


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _params_dict(p: shadowing.ShadowingParams) -> dict:
    return {
        "epsilon": p.epsilon, "delta": p.delta, "alpha": p.alpha, "r1": p.r1,
        "r2": p.r2, "k": p.k, "limit_tol": p.limit_tol, "L0": p.L0,
        "delta0": p.delta0, "delta1": p.delta1, "lam_k": p.lam_k,
        "delta_step": p.delta_step, "lip_f": p.lip_f, "lip_f_inv": p.lip_f_inv,
    }


def _write_manifest(out: Path, command: str, args_dict: dict, sys_model,
                    params=None, outputs=()) -> None:
    manifest = {
        "command": command,
        "argv": _canonical_argv(command, args_dict),
        "parameters": args_dict,
        "model": models.model_to_dict(sys_model),
        "outputs": sorted(outputs),
    }
    if params is not None:
        manifest["derived"] = _params_dict(params)
        manifest["derived"]["lambda"] = sys_model.rates.lam
        manifest["derived"]["mu"] = sys_model.rates.mu
        manifest["derived"]["margins"] = params.margins()
    _write_json(out / "manifest.json", manifest)


def _canonical_argv(command: str, args_dict: dict) -> list:
    argv = [command]
    for key, val in sorted(args_dict.items()):
        flag = "--" + key.replace("_", "-")
        if val is None or val is False:
            continue
        if isinstance(val, (list, tuple)):
            argv.append(flag)
            argv.extend(str(v) for v in val)
        elif val is True:
            argv.append(flag)
        else:
            argv.extend([flag, str(val)])
    return argv


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_constants(args) -> int:
    sys_model = _resolve_model(args.model)
    out = _out_dir(args)
    params = shadowing.delta_for_epsilon(sys_model, args.epsilon)
    margins = params.margins()
    print(f"lambda = {sys_model.rates.lam:.17g}")
    print(f"mu = {sys_model.rates.mu:.17g}")
    print(f"L0 = {params.L0:.17g}")
    print(f"delta0 = {params.delta0:.17g}")
    print(f"k = {params.k}")
    print(f"alpha = {params.alpha:.17g}")
    print(f"r1 = {params.r1:.17g}")
    print(f"r2 = {params.r2:.17g}")
    print(f"delta = {params.delta:.17g}")
    for name, m in margins.items():
        print(f"margin[{name}] = {m:.6g}")
    payload = _params_dict(params)
    payload["lambda"] = sys_model.rates.lam
    payload["mu"] = sys_model.rates.mu
    payload["margins"] = margins
    _write_json(out / "constants.json", payload)
    _write_manifest(out, "constants", {"model": args.model, "epsilon": args.epsilon,
                                       "out": str(out)},
                    sys_model, params, outputs=["constants.json"])
    print(f"PASS all margins >= 2: {all(m >= 2.0 for m in margins.values())}")
    return EXIT_PASS


def cmd_orbit(args) -> int:
    sys_model = _resolve_model(args.model)
    out = _out_dir(args)
    if args.x0 is not None:
        x0 = np.array(args.x0)
    else:
        x0 = np.random.default_rng(args.seed ^ 0x5EED).random(3)
    orbit = orbits.generate_noisy(sys_model, x0, args.window, args.delta, args.seed)
    fwd, bwd = orbits.validate(sys_model, orbit)
    orbits.write_orbit(orbit, out / "orbit.txt", model_name=args.model)
    _write_manifest(out, "orbit",
                    {"model": args.model, "delta": args.delta,
                     "window": list(args.window), "seed": args.seed,
                     "x0": [float(v) for v in x0], "out": str(out)},
                    sys_model, outputs=["orbit.txt"])
    print(f"PASS orbit window=[{orbit.n_min},{orbit.n_max}] "
          f"forward_defect={fwd:.6e} backward_defect={bwd:.6e}")
    return EXIT_PASS


def cmd_shadow(args) -> int:
    sys_model = _resolve_model(args.model)
    out = _out_dir(args)
    try:
        orbit = orbits.read_orbit(args.orbit)
    except (OSError, ValueError) as exc:
        print(f"ERROR cannot read orbit file: {exc}", file=sys.stderr)
        return EXIT_INPUT
    trace = shadowing.quasi_shadow(sys_model, orbit, args.epsilon)
    report = shadowing.verify(sys_model, orbit, trace, args.epsilon)
    shadowing.write_trace(trace, out / "trace.txt", model_name=args.model)
    _write_manifest(out, "shadow",
                    {"model": args.model, "orbit": str(args.orbit),
                     "epsilon": args.epsilon, "out": str(out)},
                    sys_model, trace.params, outputs=["trace.txt"])
    print(report.summary())
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_verify(args) -> int:
    sys_model = _resolve_model(args.model)
    out = _out_dir(args)
    try:
        orbit = orbits.read_orbit(args.orbit)
        trace = shadowing.read_trace(args.trace)
    except (OSError, ValueError, KeyError) as exc:
        print(f"ERROR cannot read input files: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report = shadowing.verify(sys_model, orbit, trace, args.epsilon)
    gap = None
    lo, hi = trace.interior
    if sys_model.is_linear:
        oracle = oracles.linear_model_shadow(sys_model, orbit, trace.k)
        gap = max(
            float(np.linalg.norm(
                _min_disp(trace.y_star[q - trace.n_min], oracle[q - trace.n_min])))
            for q in range(lo, hi + 1)
        )
    else:
        oracle = oracles.cat_map_shadow(sys_model.A, orbit.points[:, :2])
        gap = max(
            float(np.linalg.norm(
                _min_disp(trace.y_star[q - trace.n_min][:2], oracle[q - trace.n_min])))
            for q in range(lo, hi + 1)
        )
    report.oracle_gap = gap
    payload = {
        "passed": report.passed, "max_distance": report.max_distance,
        "max_base_residual": report.max_base_residual, "max_motion": report.max_motion,
        "failing_indices": report.failing_indices, "oracle_gap": gap,
        "interior": list(report.interior),
    }
    _write_json(out / "verify.json", payload)
    _write_manifest(out, "verify",
                    {"model": args.model, "orbit": str(args.orbit),
                     "trace": str(args.trace), "epsilon": args.epsilon,
                     "out": str(out)},
                    sys_model, outputs=["verify.json"])
    print(report.summary())
    return EXIT_PASS if report.passed else EXIT_FAIL


def _min_disp(a, b):
    d = (np.asarray(b) - np.asarray(a)) % 1.0
    d[d >= 1.0] = 0.0
    d[d >= 0.5] -= 1.0
    return d


def _load_perturbation(sys_model, args) -> orbits.PerturbedMap:
    if args.perturbation:
        with open(args.perturbation) as fh:
            data = json.load(fh)
        modes = [(m["coord"], m["freq"][0], m["freq"][1], m["freq"][2],
                  m.get("sin", 0.0), m.get("cos", 0.0)) for m in data["modes"]]
        return orbits.PerturbedMap(sys_model, modes, data["amplitude_bound"],
                                   certification_grid=data.get("certification_grid", 128))
    if args.delta is None:
        raise ValueError("stability needs --perturbation <file> or --delta <amplitude>")
    amp = args.delta
    a = amp / math.sqrt(3.0)
    modes = [(0, 0, 1, 0, a, 0.0), (1, 0, 0, 1, a, 0.0), (2, 1, 0, 0, a, 0.0)]
    return orbits.PerturbedMap(sys_model, modes, amplitude_bound=1.1 * amp,
                               certification_grid=128)


def cmd_stability(args) -> int:
    sys_model = _resolve_model(args.model)
    out = _out_dir(args)
    try:
        g = _load_perturbation(sys_model, args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"ERROR perturbation: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sc = stability.semiconjugacy(sys_model, g, tuple(args.grid), args.half_length,
                                 args.epsilon)
    identity = stability.check_identity(sys_model, sc, g)
    surj = stability.surjectivity_density(sc, args.epsilon)
    cont = stability.continuity_report(sc) if min(args.grid) >= 8 else None
    stability.write_semiconjugacy(sc, out / "semiconjugacy.txt",
                                  model_name=args.model,
                                  perturbation=args.perturbation or f"delta={args.delta}")
    _write_json(out / "stability.json", {
        "identity": {"passed": identity.passed,
                     "max_base_mismatch": identity.max_base_mismatch,
                     "max_fiber_residual": identity.max_fiber_residual,
                     "failing_nodes": identity.failing_nodes[:100]},
        "surjectivity": {"passed": surj.passed, "density_gap": surj.density_gap,
                         "sup_pi_id": surj.sup_pi_id,
                         "resolution_sufficient": surj.resolution_sufficient},
        "continuity": None if cont is None else {
            "max_ratio_per_axis": list(cont.max_ratio_per_axis),
            "median_ratio": cont.median_ratio,
            "anomalies": cont.anomalies[:100],
            "histogram": cont.histogram},
        "node_failures": sc.failures[:100],
    })
    _write_manifest(out, "stability",
                    {"model": args.model, "epsilon": args.epsilon,
                     "grid": list(args.grid), "half_length": args.half_length,
                     "delta": args.delta, "perturbation": args.perturbation,
                     "out": str(out)},
                    sys_model, sc.params,
                    outputs=["semiconjugacy.txt", "stability.json"])
    print(identity.summary())
    print(surj.summary())
    if cont is not None:
        print(cont.summary())
    passed = identity.passed and surj.passed and not sc.failures
    print(f"{'PASS' if passed else 'FAIL'} stability grid={args.grid} "
          f"half_length={args.half_length} node_failures={len(sc.failures)}")
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_probe(args) -> int:
    sys_model = _resolve_model(args.model)
    out = _out_dir(args)
    report = stability.plaque_expansiveness_probe(
        sys_model, args.eta, args.trials, args.seed, half_window=args.half_length)
    _write_json(out / "probe.json", {
        "passed": report.passed, "eta": report.eta,
        "trials": [{"kind": t.kind, "max_pair_distance": t.max_pair_distance,
                    "base_mismatch": t.base_mismatch,
                    "separation_steps": t.separation_steps,
                    "predicted_steps": t.predicted_steps,
                    "conforms": t.conforms} for t in report.trials],
    })
    _write_manifest(out, "probe",
                    {"model": args.model, "eta": args.eta, "trials": args.trials,
                     "seed": args.seed, "half_length": args.half_length,
                     "out": str(out)},
                    sys_model, outputs=["probe.json"])
    print(report.summary())
    return EXIT_PASS if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="torusshadow",
        description="Quasi-shadowing and quasi-stability experiments on the 3-torus.")
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p):
        p.add_argument("--model", required=True,
                       help="model file (JSON) or builtin name: linear, skew")
        p.add_argument("--out", default="runs", help="output directory")

    p = sub.add_parser("constants", help="resolved construction constants and margins")
    _common(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("orbit", help="generate a seeded noisy pseudo-orbit")
    _common(p)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--window", type=int, nargs=2, required=True, metavar=("A", "B"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=float, nargs=3, default=None)
    p.set_defaults(func=cmd_orbit)

    p = sub.add_parser("shadow", help="quasi-shadow an orbit file")
    _common(p)
    p.add_argument("--orbit", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.set_defaults(func=cmd_shadow)

    p = sub.add_parser("verify", help="re-verify a trace file against its orbit")
    _common(p)
    p.add_argument("--orbit", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("stability", help="sampled semiconjugacy for a perturbed map")
    _common(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--grid", type=int, nargs=3, required=True, metavar=("N1", "N2", "N3"))
    p.add_argument("--half-length", type=int, default=40, dest="half_length")
    p.add_argument("--delta", type=float, default=None,
                   help="amplitude of the default perturbation field")
    p.add_argument("--perturbation", default=None, help="perturbation JSON file")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("probe", help="plaque-expansiveness probe")
    _common(p)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--half-length", type=int, default=30, dest="half_length")
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except models.ModelError as exc:
        print(f"ERROR model: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except shadowing.ParameterError as exc:
        print(f"ERROR parameters: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    except (shadowing.ConstructionError, shadowing.InsufficientWindowError) as exc:
        print(f"ERROR construction: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"ERROR i/o: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
