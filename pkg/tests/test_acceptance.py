"""Acceptance criteria, one test (or test pair) per criterion.

Each test records a one-line PASS/FAIL verdict that is printed in the pytest
terminal summary. Criteria known to be unattainable as stated are marked
``xfail(strict=True)``: their assertions keep the stated tolerance, and the
suite errors if one ever starts passing.
"""

import csv
import logging
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from emorsi import RunConfig, run, write_trace
from emorsi.emotion import EmotionWeights, MetaVector, gradient
from emorsi.meaning import mi_plugin
from emorsi.runner import fig3
from emorsi.safety import InvariantReport, SafetyState, TollVector, audit
from emorsi.verify import (
    capability_across_seeds,
    check_double_exp_tail,
    check_gradient_tail,
    check_toll_concentration,
    load_trace,
    verify,
)

SEEDS = [42, 43, 44, 45, 46]


def record(k, name, ok, detail):
    ACCEPTANCE_LINES.append(f"#{k} {'PASS' if ok else 'FAIL'} {name}: {detail}")


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Default 10 000-step runs for every sweep seed; seed 42 is the default run."""
    logger = logging.getLogger("emorsi")
    level = logger.level
    logger.setLevel(logging.ERROR)
    out = {}
    d = tmp_path_factory.mktemp("acc")
    for s in SEEDS:
        t0 = time.perf_counter()
        res = run(RunConfig(seed=s))
        wall = time.perf_counter() - t0
        path = write_trace(res, d / f"trace_seed{s}.csv")
        out[s] = (res, path, wall)
    logger.setLevel(level)
    return out


@pytest.fixture(scope="module")
def goal_run(tmp_path_factory):
    res = run(RunConfig(steps=5000))
    return res, write_trace(res, tmp_path_factory.mktemp("goal") / "trace5k.csv")


def all_paths(runs, goal_run):
    return [p for _, p, _ in runs.values()] + [goal_run[1]]


# 1 -----------------------------------------------------------------------------

def test_01_information_curve_shape(tmp_path):
    t0 = time.perf_counter()
    cross, rate, svg, _ = fig3(RunConfig(), tmp_path / "fig3.svg")
    wall = time.perf_counter() - t0
    ok = cross is not None and 5 <= cross <= 50 and rate >= 0.90 and wall < 10.0
    record(1, "information-curve crossing/persistence", ok, f"crossing_step={cross} rate={rate:.4f} runtime={wall:.2f}s")
    assert cross is not None and 5 <= cross <= 50
    assert rate >= 0.90
    assert wall < 10.0
    assert svg.read_text().startswith("<svg")


# 2 -----------------------------------------------------------------------------

def test_02_gradient_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        while True:
            w = np.array([rng.uniform(0.05, 1), -rng.uniform(0.05, 1), rng.uniform(0.05, 1), rng.uniform(-0.5, 0.5)])
            if np.abs(w).sum() <= 3:
                break
        v = np.r_[rng.uniform(0, 1, 3), rng.uniform(0, 2)]
        g = gradient(MetaVector(*v), EmotionWeights(*w))
        fd = np.zeros(4)
        for i in range(4):
            e = np.zeros(4)
            e[i] = 1e-5
            fd[i] = (math.expm1(math.exp((v + e) @ w)) - math.expm1(math.exp((v - e) @ w))) / 2e-5
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
    wall = time.perf_counter() - t0
    record(2, "gradient vs finite differences", worst < 1e-6 and wall < 1, f"max_rel_err={worst:.3g} runtime={wall:.3f}s")
    assert worst < 1e-6 and wall < 1.0


# 3 -----------------------------------------------------------------------------

def test_03_clip_invariant(runs):
    tr = load_trace(runs[42][1])
    bad = int(np.sum(tr.cols["grad_norm_post"] > tr.cols["k_max"]))
    record(3, "clip invariant", bad == 0 and len(tr) == 10_000, f"violations={bad} rows={len(tr)}")
    assert len(tr) == 10_000 and bad == 0


# 4 -----------------------------------------------------------------------------

def test_04_md_mce_bounds(runs, goal_run):
    log_y = math.log(4)
    bad, rows = 0, 0
    for p in all_paths(runs, goal_run):
        c = load_trace(p).cols
        bad += int(np.sum((c["md"] < 0) | (c["md"] >= log_y) | (np.abs(c["mce"]) > log_y)))
        rows += len(c["md"])
    record(4, "MD/MCE bounds", bad == 0, f"violations={bad} rows={rows}")
    assert bad == 0


# 5 -----------------------------------------------------------------------------

def test_05_mi_lower_bound_binary_channel():
    # closed form for a binary symmetric channel with uniform input
    p = 0.1
    truth = math.log(2) + p * math.log(p) + (1 - p) * math.log(1 - p)
    assert truth == pytest.approx(0.368, abs=5e-4)
    rng = np.random.default_rng(55)
    n = 50_000
    x = rng.integers(0, 2, n)
    y = np.where(rng.random(n) < p, 1 - x, x)

    def conditional(q):
        d = np.empty((n, 2))
        d[np.arange(n), x] = 1 - q
        d[np.arange(n), 1 - x] = q
        return d

    true_q = mi_plugin(conditional(p), y, [0.5, 0.5])
    blurred = mi_plugin(conditional(0.25), y, [0.5, 0.5])
    ok_true = abs(true_q.value - truth) <= 3 * true_q.stderr
    ok_blur = blurred.value < truth + 3 * blurred.stderr
    record(5, "MI lower bound on binary channel", ok_true and ok_blur,
           f"truth={truth:.6f} true_Q={true_q.value:.6f}+-{true_q.stderr:.4f} blurred={blurred.value:.6f}")
    assert ok_true and ok_blur


# 6 -----------------------------------------------------------------------------

def test_06_submartingale_drift(runs):
    _, path, wall = runs[42]
    x = load_trace(path).cols["total"]
    bound = -3 * x.std(ddof=1) / math.sqrt(len(x))
    ok = x.mean() >= bound and wall < 60
    record(6, "submartingale drift", ok, f"mean={x.mean():.6g} bound={bound:.6g} runtime={wall:.1f}s")
    assert x.mean() >= bound
    assert wall < 60.0


# 7 -----------------------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="the envelope exp(-2 eps^2/(d eta^2)) has no horizon factor and "
                                       "underflows to 0 at T=10000; see the README")
def test_07_toll_concentration():
    t0 = time.perf_counter()
    worst, _, ok, _, note = check_toll_concentration()
    wall = time.perf_counter() - t0
    record(7, "toll concentration", ok and wall < 30, f"max(freq-3*bound)={worst:.4g} runtime={wall:.2f}s {note}")
    assert wall < 30.0
    assert ok


# 8 -----------------------------------------------------------------------------

def test_08_tail_bounds():
    g = check_gradient_tail()
    d = check_double_exp_tail()
    ok = g[2] and d[2]
    record(8, "gradient and double-exponential tails", ok, f"gradient[{g[4]}] double_exp[{d[4]}]")
    assert g[2] and d[2]


# 9 -----------------------------------------------------------------------------

def _goal_stats(goal_run):
    res, _ = goal_run
    active = res.column("goals_active")
    drops = int(np.sum(np.diff(active) < 0))
    inj = int(res.column("goal_batch").sum())
    T, p = 5000, 0.1
    tol = 3 * math.sqrt(T * p * (1 - p))
    adm, acc = res.summary["admissible_batches"], res.summary["batches_eventually_accepted"]
    return drops, inj, T * p, tol, adm, acc, res.summary["ledger_audit"]


def test_09a_goal_growth_monotone_and_injection(goal_run):
    drops, inj, mean, tol, adm, acc, audit_ok = _goal_stats(goal_run)
    assert drops == 0
    assert abs(inj - mean) <= tol
    assert audit_ok


@pytest.mark.xfail(strict=True, reason="goals rejected near the end of the run have no time left to "
                                       "realize gains; see the README")
def test_09b_goal_growth_eventual_acceptance(goal_run):
    drops, inj, mean, tol, adm, acc, audit_ok = _goal_stats(goal_run)
    ok = drops == 0 and abs(inj - mean) <= tol and acc == adm and audit_ok
    record(9, "goal growth", ok, f"drops={drops} injected={inj} (expect {mean:.0f}+-{tol:.1f}) "
                                 f"eventually_accepted={acc}/{adm} ledger_audit={audit_ok}")
    assert acc == adm


# 10 ----------------------------------------------------------------------------

def test_10_capability_quasi_monotone(runs):
    traces = [load_trace(p) for _, p, _ in runs.values()]
    res = capability_across_seeds(traces)
    detail = []
    for s, tr in zip(SEEDS, traces):
        cap = tr.cols["capability"]
        c0 = tr.s("initial_capability")
        inc = np.diff(np.r_[c0, cap])
        detail.append(f"s{s}:neg={-inc[inc < 0].sum():.2f},final={cap[-1]:.3f}>=init={c0:.3f}")
    record(10, "capability quasi-monotonicity", res.passed, f"passing_seeds={int(res.statistic)}/5 " + " ".join(detail))
    assert res.passed


# 11 ----------------------------------------------------------------------------

def test_11_trigger_biconditional(runs, goal_run):
    rep = verify(all_paths(runs, goal_run), ["trigger_biconditional"])
    bad = int(sum(r.statistic for r in rep.results))
    record(11, "trigger biconditional", rep.all_pass, f"violations={bad} traces={len(rep.results)}")
    assert rep.all_pass


# 12 ----------------------------------------------------------------------------

def test_12_determinism(runs, tmp_path):
    again = write_trace(run(RunConfig(seed=42)), tmp_path / "again.csv")
    same = again.read_bytes() == runs[42][1].read_bytes()
    record(12, "determinism", same, f"byte_identical={same} bytes={again.stat().st_size}")
    assert same


# 13 ----------------------------------------------------------------------------

def _inject(src, dst, col, value, row=5000):
    rows = list(csv.reader(open(src, newline="")))
    rows[row + 1][rows[0].index(col)] = value
    with open(dst, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    (dst.parent / (dst.name + ".summary")).write_text(open(str(src) + ".summary").read())
    return dst


def test_13_safety_region(runs, goal_run, tmp_path):
    reports = [r for res, _, _ in runs.values() for r in res.reports] + goal_run[0].reports
    outside = sum(not r.in_region for r in reports)
    region = verify(all_paths(runs, goal_run), ["safety_region", "toll_envelope", "clip_bound"])

    # audit-level faults: each perturbation flips exactly its own item
    s = SafetyState(k_max=2.0, alpha=0.05, alpha_star=0.1, gamma_est=0.4, xi_caps=(0.2, 0.2))
    toll = TollVector.seeded(np.ones(4))
    m0 = toll.l1()
    over = TollVector(toll.m + 0.5, toll.eta_max, toll.thresholds)
    flips = [
        audit([2.5], s, toll, m0, 100, 0.1, 0.2).failed() == ["clip_ok"],
        audit([1.0], s, over, m0, 100, 0.1, 0.2).failed() == ["toll_ok"],
        audit([1.0], SafetyState(2.0, 0.2, 0.1, 0.4, xi_caps=(0.2, 0.2)), toll, m0, 100, 0.1, 0.2).failed() == ["alpha_ok"],
        audit([1.0], s, toll, m0, 100, 0.3, 0.2).failed() == ["caps_ok"],
    ]
    # trace-level faults on the default run
    path = runs[42][1]
    names = ["clip_bound", "toll_envelope", "safety_region", "trigger_biconditional", "md_mce_bounds"]
    clean = {r.name for r in verify([path], names).results if not r.passed}
    k99 = _inject(path, tmp_path / "clip.csv", "grad_norm_post", "99")
    toll_row = _inject(path, tmp_path / "toll.csv", "toll_l1", "9", row=4999)
    reg = _inject(path, tmp_path / "region.csv", "in_region", "0")
    trace_flips = [
        {r.name for r in verify([p], names).results if not r.passed} - clean == {n}
        for p, n in ((k99, "clip_bound"), (toll_row, "toll_envelope"), (reg, "safety_region"))
    ]
    ok = outside == 0 and region.all_pass and all(flips) and all(trace_flips)
    record(13, "safety-region invariance", ok,
           f"checkpoints={len(reports)} outside={outside} audit_flips={sum(flips)}/4 trace_flips={sum(trace_flips)}/3")
    assert outside == 0 and region.all_pass
    assert all(flips) and all(trace_flips)
