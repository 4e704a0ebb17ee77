"""Command line entry point.

    vecsojourn [--seed N] [--threads N] [--out DIR] <command> --config FILE

Every command writes ``<command>.json``, ``<command>.csv`` and ``manifest.json``
to ``--out``.  ``replay MANIFEST`` re-runs a recorded command; numeric outputs
do not depend on ``--threads``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import verify
from .berman import LimitFieldSpec, estimate_B_doublesum, estimate_B_expmix, estimate_B_expmix_refined
from .config import RunManifest, Scenario, emit_results, load_config, scenario_from_dict
from .errors import ValidationError, VecSojournError
from .gauss_sim import GridSpec, sample_field
from .qp import kkt_residuals
from .structure import check_validity, gram_psd_check


def cmd_qp(sc: Scenario, args) -> dict:
    sol = sc.qp()
    return {"solution": sol.to_dict(), "residuals": kkt_residuals(sc.sigma, sc.b, sol),
            "rows": [{"index": i, "b": sc.b[i], "b_tilde": sol.b_tilde[i], "aleph": sol.aleph[i],
                      "determining": i in sol.index_I} for i in range(sc.d)]}


def cmd_variogram(sc: Scenario, args) -> dict:
    model = sc.limit_variogram()
    res = check_validity(model)
    gen = np.random.default_rng([args.seed, 11])
    rows = []
    for g in range(args.grids):
        pts = gen.uniform(-5, 5, size=(args.points, model.k))
        rows.append({"grid": g, "min_eig": gram_psd_check(model, pts)})
    return {"valid": res["valid"], "per_axis_min_eig": res["per_axis_min_eig"],
            "variogram": model.to_dict(), "rows": rows}


def cmd_simulate(sc: Scenario, args) -> dict:
    p = sc.params
    grid = GridSpec.box(p["T"], p["h"], sc.k)
    cov = sc.cov()
    values, factor = sample_field(cov.block, grid, sc.d, p["n"], args.seed, args.threads)
    var = values.var(axis=0)
    rows = [{"point": list(t), "mean": list(values[:, i].mean(axis=0)), "variance": list(var[i])}
            for i, t in enumerate(grid.points())]
    if args.save_paths:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        np.save(Path(args.out) / "paths.npy", values)
    return {"grid": grid.to_dict(), "jitter": factor.jitter, "n": p["n"],
            "max_variance_error": float(np.abs(var - np.diag(sc.sigma)).max()), "rows": rows}


def cmd_sojourn(sc: Scenario, args) -> dict:
    p = sc.params
    rows = [verify.mean_sojourn_identity(sc.cov(), sc.b, u, p["T"], p["h"], p["n"], args.seed, args.threads)
            for u in p["u"]]
    return {"T": p["T"], "step": p["h"], "rows": rows}


def cmd_berman(sc: Scenario, args) -> dict:
    p = sc.params
    qp = sc.qp()
    spec = LimitFieldSpec(sc.limit_variogram(), qp.aleph if qp.savage else np.linalg.solve(sc.sigma, sc.b))
    method = args.method or p["method"]
    rows = []
    if method == "expmix":
        rows = [e.to_dict() for e in estimate_B_expmix(spec, p["x"], p["lambda"], p["h"], p["n"], args.seed, args.threads)]
    elif method == "refined":
        for c, f, e in estimate_B_expmix_refined(spec, p["x"], p["lambda"], p["h"], p["n"], args.seed, args.threads):
            rows.append({**e.to_dict(), "coarse": c.estimate, "fine": f.estimate})
    elif method == "doublesum":
        rows = [e.to_dict() for e in estimate_B_doublesum(spec, p["x"], p["S"], p["h"], p["n"], p["M"],
                                                          args.seed, args.threads)]
    else:
        raise VecSojournError(f"unknown method {method!r}")
    return {"method": method, "w": spec.w, "rows": rows}


def cmd_verify(sc: Scenario, args) -> dict:
    p = sc.params
    cov, qp = sc.cov(), sc.qp()
    vg = sc.limit_variogram()
    if args.which == "thm1":
        rep = verify.verify_theorem1(cov, qp, sc.scaling, p["u"], p["x"], p["T"], p["lambda"], p["h"], p["n"],
                                     args.seed, args.threads, variogram=vg)
        out = rep.to_dict()
        out["discrepancy_table"] = {str(k): v for k, v in verify.discrepancy_table(rep).items()}
        return out
    if args.which == "thm2":
        rep = verify.verify_theorem2_ratio(cov, qp, sc.scaling, p["u"], p["x"][0], p["T"], p["n"], p["h"],
                                           p["lambda"], p["route"], args.seed, args.threads, variogram=vg)
        return rep.to_dict()
    rows = [verify.tail_sandwich(cov, qp, u, p["T"], p["eps"], p["n"], args.seed, args.threads) for u in p["u"]]
    return {"kind": "sandwich", "rows": rows}


COMMANDS = {"qp": cmd_qp, "variogram": cmd_variogram, "simulate": cmd_simulate, "sojourn": cmd_sojourn,
            "berman": cmd_berman, "verify": cmd_verify}

# arguments that change results; --threads and --out are deliberately absent
_RECORDED = ("method", "which", "grids", "points", "save_paths")


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(",", " ").split()]


_OVERRIDES = {"n": "n", "u": "u", "x": "x", "T": "T", "lam": "lambda", "S": "S", "step": "h", "M": "M",
              "eps": "eps", "route": "route"}


def _scenario(args) -> Scenario:
    """Load the config (or build one from --sigma/--b) and fold in command line overrides."""
    if args.config:
        raw = dict(load_config(args.config).raw)
    elif getattr(args, "sigma", None) and getattr(args, "b", None):
        sigma = np.loadtxt(args.sigma, delimiter="," if "," in Path(args.sigma).read_text() else None, ndmin=2)
        raw = {"version": 1, "sigma": sigma.tolist(), "b": list(args.b), "alphas": [1.0]}
    else:
        raise ValidationError("need --config, or --sigma with --b")
    run = dict(raw.get("run") or {})
    for attr, key in _OVERRIDES.items():
        val = getattr(args, attr, None)
        if val is not None:
            run[key] = val
    raw["run"] = run
    return scenario_from_dict(raw)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vecsojourn", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=None, help="master seed (overrides run.seed)")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_, required=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", "--model", "--spec", dest="config", required=required)
        g = sp.add_argument_group("run overrides")
        g.add_argument("--n", type=int)
        g.add_argument("--u", type=_floats)
        g.add_argument("--x", type=_floats)
        g.add_argument("--T", type=float)
        g.add_argument("--lambda", dest="lam", type=float)
        g.add_argument("--S", type=float)
        g.add_argument("--step", type=float)
        g.add_argument("--M", type=float)
        g.add_argument("--eps", type=float)
        g.add_argument("--route", choices=["conditional", "direct"])
        return sp

    sp = add("qp", "solve the quadratic program for (sigma, b)", required=False)
    sp.add_argument("--sigma", help="matrix file, whitespace or comma separated")
    sp.add_argument("--b", type=_floats)
    sp = add("variogram", "check validity of the limit variogram")
    sp.add_argument("action", choices=["check"], nargs="?", default="check")
    sp.add_argument("--grids", type=int, default=50)
    sp.add_argument("--points", type=int, default=40)
    sp = add("simulate", "simulate the field on [0, T)^k")
    sp.add_argument("--save-paths", action="store_true")
    add("sojourn", "mean sojourn against T^k P(X(0) > u b)")
    sp = add("berman", "estimate the Berman function B(x)")
    sp.add_argument("--method", choices=["expmix", "refined", "doublesum"], default=None)
    sp = add("verify", "limit theorem checks")
    sp.add_argument("which", choices=["thm1", "thm2", "sandwich"])
    rp = sub.add_parser("replay", help="re-run a manifest")
    rp.add_argument("manifest")
    return ap


def _run(command: str, sc: Scenario, args) -> tuple[dict, list]:
    t0 = time.perf_counter()
    result = COMMANDS[command](sc, args)
    elapsed = time.perf_counter() - t0
    stem = command if command != "verify" else f"verify_{args.which}"
    outputs = emit_results(result, args.out, stem)
    params = {k: getattr(args, k) for k in _RECORDED if hasattr(args, k)}
    man = RunManifest([command], sc.to_dict(), args.seed, params, outputs, elapsed, args.threads)
    man.write(args.out)
    return result, outputs


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "replay":
            man = RunManifest.read(args.manifest)
            sc = scenario_from_dict(man.config)
            command = man.command[0]
            for k, v in man.params.items():
                setattr(args, k, v)
            args.seed = man.seed
        else:
            sc = _scenario(args)
            command = args.command
            if args.seed is None:
                args.seed = sc.params["seed"]
        _, outputs = _run(command, sc, args)
    except VecSojournError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps({"command": command, "out": str(args.out), "files": outputs}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
