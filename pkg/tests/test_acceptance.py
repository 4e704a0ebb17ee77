"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest
import yaml

from conftest import random_b, random_spd
from vecsojourn.berman import LimitFieldSpec, estimate_B_doublesum, estimate_B_expmix, estimate_B_expmix_refined
from vecsojourn.cli import main
from vecsojourn.gauss_sim import orthant_tail, tail_identity_factors
from vecsojourn.qp import brute_force_pi, kkt_residuals, solve_pi
from vecsojourn.sojourn import ScalingFunction
from vecsojourn.structure import CovModel, VariogramModel, check_validity, eval_RV, gram_psd_check
from vecsojourn.verify import conditioning_consistency, discrepancy_table, mean_sojourn_identity, verify_theorem1

S2 = np.array([[1.0, 0.5], [0.5, 1.0]])


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail, elapsed):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail} | {elapsed:.1f} s")
        assert ok, detail

    return emit


def test_c1_qp_oracle(verdict):
    t0 = time.perf_counter()
    gen = np.random.default_rng(2024)
    worst_tau = worst_id = 0.0
    mismatches = 0
    for _ in range(1000):
        d = int(gen.integers(2, 7))
        S = random_spd(gen, d)
        b = random_b(gen, d)
        a, o = solve_pi(S, b), brute_force_pi(S, b)
        mismatches += a.index_I != o.index_I
        worst_tau = max(worst_tau, abs(a.tau - o.tau) / o.tau)
        worst_id = max(worst_id, max(kkt_residuals(S, b, a).values()))
    el = time.perf_counter() - t0
    ok = mismatches == 0 and worst_tau <= 1e-9 and worst_id <= 1e-9 and el < 30
    verdict(1, "QP oracle equivalence", ok,
            f"index mismatches {mismatches}, max tau rel diff {worst_tau:.2e}, max identity residual {worst_id:.2e}", el)


def test_c2_variogram_validity(verdict):
    t0 = time.perf_counter()
    gen = np.random.default_rng(7)
    wrong, worst = [], 0.0
    for rho in np.round(np.arange(-1.5, 1.5 + 1e-9, 0.1), 10):
        m = VariogramModel.common((1.0, 1.0), [[1, rho], [rho, 1]])
        valid = check_validity(m)["valid"]
        if valid != (abs(rho) <= 1):
            wrong.append(float(rho))
        if valid:
            for _ in range(50):
                pts = gen.uniform(-5, 5, (40, 2))
                scale = max(1.0, np.abs(eval_RV(m, pts, pts)).max())
                worst = min(worst, gram_psd_check(m, pts) / scale)
    el = time.perf_counter() - t0
    ok = not wrong and worst >= -1e-8 and el < 60
    verdict(2, "variogram validity iff", ok, f"misclassified rho {wrong}, min scaled Gram eig {worst:.2e}", el)


def test_c3_pickands(verdict):
    t0 = time.perf_counter()
    res = {}
    for alpha in (1.0, 2.0):
        spec = LimitFieldSpec(VariogramModel.common((alpha,), [[1.0]]), [1.0])
        c, f, e = estimate_B_expmix_refined(spec, 0.0, lam=10.0, h=0.05, n=20000, seed=31, threads=4)
        res[alpha] = (c, f, e)
    el = time.perf_counter() - t0
    h1, h2 = res[1.0][2], res[2.0][2]
    ok = abs(h1.estimate - 1.0) <= 0.15 and abs(h2.estimate - 1 / math.sqrt(math.pi)) <= 0.10 and el < 900
    detail = (f"H1 {h1.estimate:.4f} +- {h1.stderr:.4f} (raw h, h/2: {res[1.0][0].estimate:.4f}, "
              f"{res[1.0][1].estimate:.4f}); H2 {h2.estimate:.4f} +- {h2.stderr:.4f} (raw {res[2.0][0].estimate:.4f}, "
              f"{res[2.0][1].estimate:.4f}); targets 1, {1 / math.sqrt(math.pi):.4f}")
    verdict(3, "Pickands constants", ok, detail, el)


def test_c4_cross_agreement(verdict):
    t0 = time.perf_counter()
    specs = {
        "d=1": LimitFieldSpec(VariogramModel.common((1.0,), [[1.0]]), [1.0]),
        "d=2 rho=0.5": LimitFieldSpec(VariogramModel.common((1.0,), S2), [2 / 3, 2 / 3]),
    }
    lines, ok = [], True
    for name, spec in specs.items():
        em = estimate_B_expmix(spec, [0.0, 0.5], lam=10.0, h=0.05, n=20000, seed=41, threads=4)
        ds = estimate_B_doublesum(spec, [0.0, 0.5], S=16.0, h=0.05, n=20000, seed=42, threads=4)
        for a, b in zip(em, ds):
            tol = 3 * math.hypot(a.stderr, b.stderr) + 0.10 * max(abs(a.estimate), abs(b.estimate))
            diff = abs(a.estimate - b.estimate)
            ok &= diff <= tol
            lines.append(f"{name} x={a.x}: {a.estimate:.4f} vs {b.estimate:.4f} (diff {diff:.4f} <= {tol:.4f})")
    el = time.perf_counter() - t0
    verdict(4, "expmix vs doublesum", ok and el < 1800, "; ".join(lines), el)


def test_c5_mean_sojourn(verdict):
    t0 = time.perf_counter()
    cov = CovModel(S2, np.array([1.0, 1.0]))
    rows = [mean_sojourn_identity(cov, [1, 1], u, T=1.0, h=0.1, n=10**5, seed=51, threads=4) for u in (1.0, 2.0)]
    el = time.perf_counter() - t0
    ok = all(r["z"] <= 3 for r in rows) and el < 600
    detail = "; ".join(f"u={r['u']}: mean L {r['mean_L']:.5g} vs {r['target']:.5g} (z {r['z']:.2f})" for r in rows)
    verdict(5, "E L_u identity", ok, detail, el)


def test_c6_orthant_tail(verdict):
    t0 = time.perf_counter()
    q = orthant_tail(S2, [1, 1], 3.0, "quad2d")
    mc = orthant_tail(S2, [1, 1], 3.0, "identity_mc", n=10**6, seed=61, threads=4)
    rel = abs(mc["value"] - q["value"]) / q["value"]
    ratios = tail_identity_factors(S2, np.linalg.solve(S2, [1, 1]), [2, 4, 8], 10**6, seed=62, threads=4).mean(axis=0)
    mono = bool(ratios[0] < ratios[1] < ratios[2] <= 1)
    el = time.perf_counter() - t0
    ok = rel < 1e-2 and mono and el < 120
    verdict(6, "orthant tail identity", ok,
            f"identity_mc {mc['value']:.6g} vs quad2d {q['value']:.6g} (rel {rel:.2e}); "
            f"identity/asymptotic at u=2,4,8: {np.round(ratios, 5).tolist()}", el)


def test_c7_conditional_limit_trend(verdict):
    t0 = time.perf_counter()
    rep = verify_theorem1(CovModel(np.eye(1), np.array([1.0])), solve_pi(np.eye(1), [1.0]), ScalingFunction((1.0,)),
                          [3.0, 5.0, 8.0], [0.5, 1.0, 2.0], T=1.0, lam=4.0, h=0.05, n=200000, seed=71, threads=4)
    tab = discrepancy_table(rep)
    mono = all(all(a >= b for a, b in zip(v, v[1:])) for v in tab.values())
    at8 = [r for r in rep.rows if r["u"] == 8.0]
    close = all(r["discrepancy"] <= 3 * r["stderr"] + 0.05 for r in at8)
    el = time.perf_counter() - t0
    detail = "; ".join(f"x={x}: " + ", ".join(f"{v:.4f}" for v in vals) for x, vals in tab.items())
    verdict(7, "conditional sojourn law trend over u = 3, 5, 8", mono and close and el < 1200, detail, el)


def test_c8_conditional_exactness(verdict):
    t0 = time.perf_counter()
    r = conditioning_consistency(CovModel(S2, np.array([1.0])), [1, 1], 1.0, lam=2.0, h=0.1,
                                 scaling=ScalingFunction((1.0,)), n=10**4, seed=81, threads=4)
    el = time.perf_counter() - t0
    verdict(8, "conditional sampler vs naive rejection", r["passed"] and el < 300,
            f"KS {r['ks']:.4f} vs 1% critical {r['critical']:.4f}", el)


ACCEPTANCE_RUNS = {
    "thm1": ({"version": 1, "sigma": [[1.0]], "b": [1.0], "alphas": [1.0],
              "run": {"n": 20000, "u": [3, 5, 8], "x": [0.5, 1, 2], "T": 1, "lambda": 4, "h": 0.05}},
             ["verify", "thm1"], "verify_thm1.json"),
    "pickands": ({"version": 1, "sigma": [[1.0]], "b": [1.0], "alphas": [1.0],
                  "run": {"n": 5000, "x": [0.0], "lambda": 10, "h": 0.05}},
                 ["berman", "--method", "refined"], "berman.json"),
    "mean_sojourn": ({"version": 1, "sigma": S2.tolist(), "b": [1.0, 1.0], "alphas": [1.0, 1.0],
                      "run": {"n": 10000, "u": [1, 2], "T": 1, "h": 0.1}},
                     ["sojourn"], "sojourn.json"),
}


def test_c9_determinism(verdict, tmp_path, capsys):
    t0 = time.perf_counter()
    same = []
    for name, (cfg, cmd, output) in ACCEPTANCE_RUNS.items():
        path = tmp_path / f"{name}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        assert main(["--out", str(a), "--threads", "1", "--seed", "91", cmd[0], "--config", str(path), *cmd[1:]]) == 0
        assert main(["--out", str(b), "--threads", "4", "replay", str(a / "manifest.json")]) == 0
        same.append((a / output).read_bytes() == (b / output).read_bytes()
                    and json.loads((b / "manifest.json").read_text())["threads"] == 4)
    capsys.readouterr()
    el = time.perf_counter() - t0
    verdict(9, "replay determinism across thread counts", all(same),
            ", ".join(f"{n}: {'identical' if s else 'DIFFERENT'}" for n, s in zip(ACCEPTANCE_RUNS, same)), el)
