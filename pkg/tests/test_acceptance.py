"""Acceptance run: one test per criterion, each printing a PASS/FAIL line.

Tolerances and instance counts are pinned here; the lines are repeated in
the terminal summary under "acceptance criteria".
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_force_rule_optimum, lp_vertex_optimum, plain_sgd_logistic
from problems import random_rule_problem, submodularity_triple
from rope_explain.bench import (MethodConfig, StabilityConfig, SweepConfig, intro_scenario,
                                run_shift_sweep, run_stability)
from rope_explain.cli import main as cli_main
from rope_explain.linexp import LinearExplanation, TrainConfig, train_robust_linear
from rope_explain.oracle import (ChildExitedError, CoordinateThresholdBlackBox, IdMismatchError,
                                 MalformedReplyError, connect_external)
from rope_explain.ruleexp import Predicate, Rule, RuleProblem, local_search_select
from rope_explain.shiftset import (ShiftSet, grid_robust_loss, marginal_dependence_audit,
                                   surrogate_bound_audit, worst_case_shift)

pytestmark = pytest.mark.slow

LP_TOL = 1e-9
SUBMOD_TOL = 1e-9
REDUCTION_TOL = 1e-6
GRID_STEP = 0.05
EPS_LS = 0.1
SEED = 1


def test_c01_lp_oracle_equivalence(criterion):
    r = np.random.default_rng(SEED)
    t = time.monotonic()
    worst = 0.0
    for _ in range(10_000):
        n = int(r.integers(1, 7))
        g = r.normal(size=n) * r.choice([0.1, 1.0, 10.0])
        if r.random() < 0.2:
            g[r.integers(n)] = 0.0
        s0, dm = float(r.uniform(0, 5)), float(r.uniform(0, 3))
        d = worst_case_shift(g, ShiftSet(s0, dm, n)).delta
        opt = lp_vertex_optimum(g, s0, dm)
        worst = max(worst, abs(float(g @ d) - opt) / max(1.0, abs(opt)))
    elapsed = time.monotonic() - t
    criterion(1, worst <= LP_TOL and elapsed < 10,
              f"LP oracle: 1e4 instances, max rel. error {worst:.1e} (tol {LP_TOL:g}), {elapsed:.1f}s (< 10s)")


def test_c02_surrogate_audit(criterion):
    r = np.random.default_rng(SEED)
    t = time.monotonic()
    violations, worst_gap = 0, np.inf
    for _ in range(200):
        X = r.normal(size=(20, 2))
        E = LinearExplanation(r.normal(size=2) * 2, float(r.normal()))
        B = CoordinateThresholdBlackBox(2, int(r.integers(2)), float(r.normal(scale=0.5)))
        S = ShiftSet(float(r.uniform(0, 2)), float(r.uniform(0.05, 1)), 2)
        lhs, rhs = surrogate_bound_audit(E, B, X, S, GRID_STEP)
        violations += lhs > rhs
        worst_gap = min(worst_gap, rhs - lhs)
    elapsed = time.monotonic() - t
    criterion(2, violations == 0 and elapsed < 60,
              f"surrogate audit: 200 2-d instances, {violations} violations, min rhs-lhs {worst_gap:.3g}, "
              f"{elapsed:.1f}s (< 60s)")


def test_c03_marginal_dependence_audit(criterion):
    r = np.random.default_rng(SEED)
    t = time.monotonic()
    violations, worst_ratio = 0, 0.0
    for k in range(100):
        n = int(r.integers(2, 4))
        X = r.normal(size=(20, n))
        B = CoordinateThresholdBlackBox(n, int(r.integers(n)), float(r.normal(scale=0.5)))
        S = ShiftSet(float(r.uniform(0.1, 1.0)), float(r.uniform(0.1, 1.0)), n)
        E = train_robust_linear(X, B, S, TrainConfig(seed=k, epochs=5))
        i = int(r.integers(n))
        c = float(r.uniform(-1, 1) * min(S.s0, S.delta_max))
        onehot = np.zeros(n)
        onehot[i] = c
        lhs = marginal_dependence_audit(E, B, X, i, c, S)
        eps = grid_robust_loss(E, B, X, S, GRID_STEP, extra=onehot)
        violations += lhs > 2 * eps + 1e-12
        if eps > 0:
            worst_ratio = max(worst_ratio, lhs / (2 * eps))
    elapsed = time.monotonic() - t
    criterion(3, violations == 0 and elapsed < 120,
              f"marginal-dependence audit: 100 trained 2-3-d instances, {violations} violations, "
              f"max lhs/(2 eps) {worst_ratio:.3f}, {elapsed:.1f}s (< 120s)")


def test_c04_objective_structure(criterion):
    r = np.random.default_rng(SEED)
    t = time.monotonic()
    sub_fail = mod_fail = mono_fail = done = 0
    while done < 10_000:
        P = random_rule_problem(r)
        triple = submodularity_triple(r, P)
        if triple is None:
            continue
        A, B, e = triple
        gain_A = P.value(A + [e]) - P.value(A)
        gain_B = P.value(B + [e]) - P.value(B)
        sub_fail += gain_A < gain_B - SUBMOD_TOL
        rest = [i for i in B if i not in A]
        mod_fail += P.disagree_count(A + rest) != P.disagree_count(A) + P.disagree_count(rest)
        mono_fail += P.cover_count(A) > P.cover_count(B)
        done += 1
    # witness: same coverage, wrong label; adding it lowers the value
    X = np.array([[-1.0], [1.0]])
    good = Rule((Predicate(0, "GT", 0.0),), 1)
    bad = Rule((Predicate(0, "GT", 0.0),), 0)
    W = RuleProblem.build([good, bad], X, CoordinateThresholdBlackBox(1, 0), [], lam=5.0)
    witness = W.value([0]) > W.value([0, 1])
    elapsed = time.monotonic() - t
    ok = sub_fail == 0 and mod_fail == 0 and mono_fail == 0 and witness and elapsed < 30
    criterion(4, ok, f"objective structure: 1e4 triples, {sub_fail} submodularity / {mod_fail} modularity / "
                     f"{mono_fail} cover-monotonicity failures, witness {'holds' if witness else 'FAILS'}, "
                     f"{elapsed:.1f}s (< 30s)")


def test_c05_local_search_guarantee(criterion):
    r = np.random.default_rng(SEED)
    t = time.monotonic()
    fails, worst = 0, np.inf
    for k in range(200):
        P = random_rule_problem(r)
        alpha = int(r.integers(1, 4))
        opt, _ = brute_force_rule_optimum(P.cover, P.disagree, P.lam, P.C, alpha)
        got = P.value(local_search_select(P, alpha, EPS_LS, k))
        fails += got < opt / (4 + EPS_LS)
        worst = min(worst, got / opt if opt > 0 else 1.0)
    elapsed = time.monotonic() - t
    criterion(5, fails == 0 and elapsed < 120,
              f"local search: 200 instances, {fails} below opt/(4+eps), worst ratio {worst:.3f}, "
              f"{elapsed:.1f}s (< 120s)")


def test_c06_reduction_to_plain_sgd(criterion):
    t = time.monotonic()
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        n = int(r.integers(2, 6))
        X = r.normal(size=(200, n))
        B = CoordinateThresholdBlackBox(n, int(r.integers(n)))
        E = train_robust_linear(X, B, ShiftSet(0, 1, n), TrainConfig(seed=seed))
        w, b = plain_sgd_logistic(X, B.batch(X), seed=seed)
        worst = max(worst, float(np.max(np.abs(E.weights - w))), abs(E.bias - b))
    elapsed = time.monotonic() - t
    criterion(6, worst <= REDUCTION_TOL and elapsed < 30,
              f"s0=0 reduction: 20 seeds, max parameter gap {worst:.1e} (tol {REDUCTION_TOL:g}), "
              f"{elapsed:.1f}s (< 30s)")


def _intro_runs():
    out = []
    for seed in range(20):
        sc = intro_scenario(seed)
        y = sc.black_box.batch(sc.shifted)
        fids = []
        for S in (ShiftSet(0, 0, 2), ShiftSet(1, 1, 2)):
            E = train_robust_linear(sc.train, sc.black_box, S, TrainConfig(seed=seed))
            fids.append(float(np.mean(E.predict_batch(sc.shifted) == y)))
        out.append(tuple(fids))
    return out


def test_c07_intro_scenario(criterion):
    t = time.monotonic()
    runs = _intro_runs()
    elapsed = time.monotonic() - t
    both = sum(plain < 0.75 and robust >= 0.9 for plain, robust in runs)
    plain_mean = np.mean([p for p, _ in runs])
    robust_ok = sum(rb >= 0.9 for _, rb in runs)
    criterion(7, both >= 18 and elapsed < 120,
              f"intro scenario: {both}/20 seeds with non-robust < 0.75 and ROPE >= 0.9 (need 18); "
              f"non-robust mean {plain_mean:.4f}, ROPE >= 0.9 in {robust_ok}/20, {elapsed:.1f}s (< 120s)")


SWEEP_ALPHAS = (0.0, 0.2, 0.4, 0.6, 0.8)


def test_c08_correlation_sweep(criterion):
    cfg = SweepConfig("correlation", SWEEP_ALPHAS, replicates=20, seed=SEED,
                      methods=("rope_linear", "baseline_linear", "rope_dset", "baseline_dset"),
                      dim_range=(2, 4), method_config=MethodConfig())
    t = time.monotonic()
    rep = run_shift_sweep(cfg)
    elapsed = time.monotonic() - t
    errors = sum(r["error"] is not None for r in rep.rows)
    parts, ok = [], errors == 0 and elapsed < 900
    for fam in ("linear", "dset"):
        for a in (0.4, 0.6, 0.8):
            rd, bd = rep.mean(f"rope_{fam}", "pct_drop", a), rep.mean(f"baseline_{fam}", "pct_drop", a)
            ok &= rd <= bd
            parts.append(f"{fam}@{a}: {rd:.2f}{'<=' if rd <= bd else '>'}{bd:.2f}")
        top = rep.mean(f"rope_{fam}", "pct_drop", 0.8)
        ok &= top <= 15.0
        parts.append(f"{fam} drop@0.8 {top:.2f}% (<= 15%)")
    criterion(8, bool(ok), f"correlation sweep (mean pct_drop, ROPE vs baseline): {'; '.join(parts)}; "
                           f"{errors} errored rows, {elapsed:.0f}s (< 900s)")


def test_c09_stability(criterion):
    cfg = StabilityConfig(seed=SEED, noise_std=0.2, replicates=20, methods=("rope_linear", "baseline_linear"))
    t = time.monotonic()
    rep = run_stability(cfg)
    elapsed = time.monotonic() - t
    rope = [r["coef_mismatch"] for r in rep.sorted_rows() if r["method"] == "rope_linear"]
    base = [r["coef_mismatch"] for r in rep.sorted_rows() if r["method"] == "baseline_linear"]
    ok = None not in rope + base and np.mean(rope) <= np.mean(base) and elapsed < 300
    wins = sum(a <= b for a, b in zip(rope, base))
    criterion(9, bool(ok), f"stability: mean coefficient mismatch ROPE {np.mean(rope):.3f} vs baseline "
                           f"{np.mean(base):.3f} (medians {np.median(rope):.3f} vs {np.median(base):.3f}, "
                           f"ROPE <= baseline in {wins}/20 seeds), {elapsed:.0f}s (< 300s)")


def _echo(mode="ok", n=3):
    return [sys.executable, "-m", "rope_explain.echo_child", "--n-features", str(n), "--mode", mode]


def test_c10_external_protocol(criterion):
    t = time.monotonic()
    P = np.random.default_rng(SEED).normal(size=(1000, 3))
    want = (P[:, 0] >= 0).astype(int)
    checks = {}
    with connect_external(_echo(), timeout=10) as bb:
        singles = np.array([bb.query(p) for p in P])
        checks["round trip"] = np.array_equal(singles, want)
        checks["batch/query"] = np.array_equal(bb.batch(P), singles)
    for name, mode, err, calls in (("malformed", "malformed", MalformedReplyError, 1),
                                   ("id mismatch", "wrong-id", IdMismatchError, 1),
                                   ("child death", "die-after=3", ChildExitedError, 4)):
        raised = None
        with connect_external(_echo(mode), timeout=10) as bb:
            try:
                for _ in range(calls):
                    bb.query(P[0])
            except Exception as exc:  # noqa: BLE001 - classified below
                raised = exc
        checks[name] = isinstance(raised, err)
    elapsed = time.monotonic() - t
    ok = all(checks.values()) and elapsed < 30
    criterion(10, ok, "external protocol: " + ", ".join(f"{k} {'ok' if v else 'FAIL'}" for k, v in checks.items())
              + f", {elapsed:.1f}s (< 30s)")


def _pipeline(d: Path) -> list[Path]:
    def run(*argv):
        rc = cli_main([str(a) for a in argv])
        assert rc == 0, argv

    data, bb = d / "data.csv", d / "bb.json"
    run("synth", "--kind", "correlation", "--beta", 0.3, "--dim", 3, "--n", 200, "--shift-alpha", 0.4,
        "--seed", 7, "--out", data)
    run("blackbox", "--data", data, "--kind", "mlp", "--layers", "8,8", "--epochs", 5, "--train-group", "train",
        "--seed", 7, "--out", bb)
    outs = [data, bb]
    for fam in ("linear", "dset", "linear-multi", "dset-multi"):
        e = d / f"E-{fam}.json"
        run("explain", "--data", data, "--group", "train", "--blackbox", bb, "--family", fam, "--s0", 1,
            "--delta-max", 0.5, "--k-max", 3, "--seed", 7, "--out", e)
        outs.append(e)
    ev = d / "eval.json"
    run("eval", "--explanation", d / "E-linear.json", "--data", data, "--blackbox", bb, "--train-group", "train",
        "--metrics", "fidelity,audit", "--audit-n", 30, "--grid-step", 0.1, "--seed", 7, "--out", ev)
    run("sweep", "--kind", "mean", "--alphas", "0,0.5", "--replicates", 2, "--dim-max", 3, "--n", 200,
        "--methods", "rope_linear,baseline_dset", "--seed", 7, "--out", d / "sweep")
    run("stability", "--replicates", 2, "--dim-max", 3, "--n", 200, "--methods", "rope_linear,rope_dset",
        "--seed", 7, "--out", d / "stab")
    return outs + [ev, d / "sweep.csv", d / "sweep.json", d / "stab.csv", d / "stab.json"]


def test_c11_cli_determinism(criterion, tmp_path, capsys):
    first = {p: p.read_bytes() for p in _pipeline(tmp_path)}
    for p in first:
        p.unlink()
    second = {p: p.read_bytes() for p in _pipeline(tmp_path)}
    capsys.readouterr()
    differing = [p.name for p in first if first[p] != second[p]]
    criterion(11, not differing, f"CLI determinism: {len(first)} output files from synth, blackbox, explain x4, "
                                 f"eval, sweep, stability; {len(differing)} differ {differing}")
