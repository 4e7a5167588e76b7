"""Statistical and exact checks over run traces, plus the synthetic tail tests.

Every check has a registry entry; ``verify`` runs a selection and returns a
:class:`StatReport` whose lines are ``key=value`` records.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .runner import COLUMNS
from .safety import double_exp_tail_mc, gradient_tail_mc, toll_concentration_mc, toll_envelope


class TraceParseError(ValueError):
    pass


@dataclass
class Trace:
    path: str
    cols: dict  # name -> float array
    summary: dict

    def __len__(self):
        return len(self.cols["t"]) if self.cols else 0

    def s(self, key, cast=float):
        if key not in self.summary:
            raise TraceParseError(f"{self.path}.summary: missing key '{key}'")
        return cast(self.summary[key])


def load_summary(path) -> dict:
    out = {}
    p = Path(str(path) + ".summary")
    if not p.exists():
        raise TraceParseError(f"{p}: summary sidecar not found")
    for i, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise TraceParseError(f"{p}:{i}: expected key=value")
        k, v = line.split("=", 1)
        out[k] = v
    return out


def load_trace(path) -> Trace:
    path = str(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceParseError(f"{path}:1: empty file (no header)") from None
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise TraceParseError(f"{path}:1: header lacks columns {missing}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise TraceParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise TraceParseError(f"{path}:{lineno}: {exc}") from None
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    cols = {name: arr[:, j] for j, name in enumerate(header)}
    return Trace(path, cols, load_summary(path))


@dataclass
class CheckResult:
    name: str
    statistic: float
    bound: float
    passed: bool
    n_samples: int
    source: str = ""
    note: str = ""


@dataclass
class StatReport:
    results: list = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.results)

    def by_name(self, name: str) -> list:
        return [r for r in self.results if r.name == name]

    def text(self) -> str:
        lines = []
        for r in self.results:
            rec = (f"check={r.name} statistic={r.statistic:.9g} bound={r.bound:.9g} "
                   f"pass={'true' if r.passed else 'false'} n={r.n_samples}")
            if r.source:
                rec += f" source={r.source}"
            if r.note:
                rec += f" note={r.note.replace(' ', '_')}"
            lines.append(rec)
        lines.append(f"all_pass={'true' if self.all_pass else 'false'}")
        return "\n".join(lines) + "\n"


# ---- trace checks -----------------------------------------------------------

def _v_norm(tr: Trace) -> np.ndarray:
    c = tr.cols
    return np.sqrt(c["c"] ** 2 + c["e"] ** 2 + c["n"] ** 2 + c["S"] ** 2)


def check_trigger(tr: Trace):
    c = tr.cols
    gamma = tr.s("gamma")
    expect = (c["eps_t"] > 0) & (c["i_pred"] > gamma)
    bad = int(np.sum(expect != (c["fired"] == 1)))
    # the operator is applied iff fired
    bad += int(np.sum((c["mod_step"] > 0) & (c["fired"] != 1)))
    return bad, 0, bad == 0, len(tr), "fired iff eps>0 and i_pred>gamma; step only when fired"


def check_clip(tr: Trace):
    c = tr.cols
    bad = int(np.sum(c["grad_norm_post"] > c["k_max"]))
    return bad, 0, bad == 0, len(tr), "rows with post-clip norm above k_max"


def check_md_mce(tr: Trace):
    c = tr.cols
    log_y = math.log(tr.s("num_classes", int))
    bad = int(np.sum((c["md"] < 0) | (c["md"] >= log_y) | (np.abs(c["mce"]) > log_y)))
    return bad, 0, bad == 0, len(tr), "rows outside 0<=MD<log|Y|, |MCE|<=log|Y|"


def check_submartingale(tr: Trace):
    x = tr.cols["total"]
    n = len(x)
    if n < 2:
        return math.nan, math.nan, False, n, "too few rows"
    bound = -3.0 * float(x.std(ddof=1)) / math.sqrt(n)
    m = float(x.mean())
    return m, bound, m >= bound, n, "mean reward increment vs -3 sd/sqrt(N)"


def check_recurrence(tr: Trace):
    frac = float(np.mean(_v_norm(tr) >= tr.s("v_min")))
    floor = tr.s("p_grad_floor")
    return frac, floor, frac >= floor, len(tr), "fraction of steps with |v|>=v_min"


def check_toll(tr: Trace):
    c = tr.cols
    m0 = tr.s("toll_m0_l1")
    d, eta = tr.s("d_toll", int), tr.s("eta_max")
    T = c["t"] + 1
    # evaluated at the audit checkpoints, like the in-run monitor
    every = tr.s("audit_every", int)
    at = (T % every == 0) | (np.arange(len(tr)) == len(tr) - 1)
    worst = -math.inf
    for Ti, m in zip(T[at], c["toll_l1"][at]):
        worst = max(worst, m - (m0 + toll_envelope(int(Ti), d, eta)))
    return worst, 0.0, worst <= 1e-9, int(at.sum()), "max excess of |m_t|_1 over m0 + envelope at checkpoints"


def check_region(tr: Trace):
    bad = int(np.sum(tr.cols["in_region"] != 1))
    return bad, 0, bad == 0, len(tr), "rows flagged outside the safety region"


def check_goal_growth(tr: Trace):
    c = tr.cols
    drops = int(np.sum(np.diff(c["goals_active"]) < 0))
    T = len(tr)
    p = tr.s("p_gen")
    inj = int(c["goal_batch"].sum())
    tol = 3 * math.sqrt(T * p * (1 - p)) if p < 1 else 0.0
    inj_ok = abs(inj - T * p) <= tol
    adm = tr.s("admissible_batches", int)
    acc = tr.s("batches_eventually_accepted", int)
    ledger_ok = tr.summary.get("ledger_audit") == "true"
    ok = drops == 0 and inj_ok and acc == adm and ledger_ok
    note = f"drops={drops} injected={inj} expected={T * p:.1f}+-{tol:.1f} accepted_batches={acc}/{adm}"
    return adm - acc, 0, ok, T, note


def capability_stats(tr: Trace):
    cap = tr.cols["capability"]
    c0 = tr.s("initial_capability")
    inc = np.diff(np.r_[c0, cap])
    neg = float(-inc[inc < 0].sum())
    final_ok = bool(cap[-1] >= c0) if len(cap) else False
    return neg, final_ok


def check_capability(tr: Trace):
    neg, final_ok = capability_stats(tr)
    budget = tr.s("neg_budget")
    return neg, budget, neg <= budget and final_ok, len(tr), f"final>=initial={final_ok}"


def check_stability(tr: Trace):
    c = tr.cols
    h0 = tr.s("h0_norm")
    lm, eta = tr.s("l_m"), tr.s("eta_m")
    radius = h0 + np.cumsum(np.where(c["fired"] == 1, lm * c["k_max"] * eta, 0.0))
    excess = float(np.max(c["h_norm"] - radius)) if len(tr) else 0.0
    ratio = float(np.max(c["h_norm"]) / h0) if len(tr) else 0.0
    ok = excess <= 1e-9 and ratio <= 10.0
    return ratio, 10.0, ok, len(tr), f"max excess over clipped radius={excess:.3g}"


def check_itemization(tr: Trace):
    c = tr.cols
    items = ["base_f", "spikes", "penalty", "dg_bonus", "baseline_bonus", "md_bonus", "mce_bonus", "external_mixed"]
    parts = np.stack([c[k] for k in items], axis=1)
    # serialized values carry 9 significant digits each
    tol = 1e-8 * (np.abs(parts).sum(axis=1) + np.abs(c["total"]) + 1.0)
    bad = int(np.sum(np.abs(parts.sum(axis=1) - c["total"]) > tol))
    cum = 0.0
    for x in c["total"]:
        cum += float(x)
    exact = cum == tr.s("cumulative_reward")
    return bad, 0, bad == 0 and exact, len(tr), f"cumulative_sum_exact={exact}"


def check_dg_trace(tr: Trace):
    c = tr.cols
    lam = tr.s("lambda_dg")
    bound = float(np.max(c["f_base"])) / (1 - lam) + 1e-9 if len(tr) else 0.0
    stat = float(np.max(np.abs(c["z_dg"]))) if len(tr) else 0.0
    return stat, bound, stat <= bound * (1 + 1e-8), len(tr), "max |z| vs max f/(1-lambda)"


def check_external_reward(tr: Trace):
    stat = float(np.max(np.abs(tr.cols["r_ext"]))) if len(tr) else 0.0
    bound = tr.s("r_max")
    return stat, bound, stat <= bound, len(tr), "max |r_ext|"


def check_viability(tr: Trace):
    c = tr.cols
    t0 = tr.s("warmup_t0", int)
    post = c["fired"][t0:]
    frac = float(post.mean()) if len(post) else 0.0
    return frac, 0.01, frac >= 0.01, len(post), "fraction of RSI-viable post-warm-up steps"


def check_gain(tr: Trace):
    fired = int(tr.s("rsi_count", int))
    viol = tr.s("gain_violations", int)
    rate = viol / fired if fired else 0.0
    return rate, 0.05, rate <= 0.05, fired, "per-event ability-gain violations (tolerance tol_gain)"


def check_composite(tr: Trace):
    c = tr.cols
    v = np.stack([c["c"], c["e"], c["n"], c["S"]], axis=1)
    dv = np.linalg.norm(np.diff(v, axis=0), axis=1)
    eps = np.abs(c["eps_t"][1:])
    lim = c["k_max"][1:] * dv
    tol = 1e-6 * (lim + 1e-9)
    bad = int(np.sum(eps > lim + tol))
    return bad, 0, bad == 0, len(dv), "rows where |drive| exceeds k_max*|dv|"


def _synthetic(fn):
    fn.synthetic = True
    return fn


@_synthetic
def check_gradient_tail(seed=0):
    rng = np.random.default_rng([seed, 0x14])
    k_max, res = gradient_tail_mc(rng)
    worst = max(freq - (bound + 3 * se) for freq, se, bound in res.values())
    note = ";".join(f"d{d}:{f:.4g}<={b:.4g}" for d, (f, se, b) in res.items())
    return worst, 0.0, worst <= 0, 100_000, note


@_synthetic
def check_double_exp_tail(seed=0):
    rng = np.random.default_rng([seed, 0x23])
    res = double_exp_tail_mc(rng)
    worst = max(freq - (bound + 3 * se) for freq, se, bound in res.values())
    note = ";".join(f"z{z:.3g}:{f:.4g}<={b:.4g}" for z, (f, se, b) in res.items())
    return worst, 0.0, worst <= 0, 100_000, note


@_synthetic
def check_toll_concentration(seed=0):
    rng = np.random.default_rng([seed, 0x15])
    res = toll_concentration_mc(rng)
    # exceedance must not exceed three times the envelope; the bound often underflows to 0
    worst = max(freq - 3 * bound for freq, se, bound, _ in res.values())
    note = ";".join(f"eps{e}:freq={f:.4g},bound={b:.3g},bound_with_T={bt:.3g}" for e, (f, se, b, bt) in res.items())
    return worst, 0.0, worst <= 0, 1000, note


TRACE_CHECKS = {
    "trigger_biconditional": check_trigger,
    "clip_bound": check_clip,
    "md_mce_bounds": check_md_mce,
    "submartingale_drift": check_submartingale,
    "recurrence": check_recurrence,
    "toll_envelope": check_toll,
    "safety_region": check_region,
    "goal_growth": check_goal_growth,
    "capability_quasi_monotone": check_capability,
    "stability_radius": check_stability,
    "reward_itemization": check_itemization,
    "dg_trace_bound": check_dg_trace,
    "external_reward_bound": check_external_reward,
    "rsi_viability": check_viability,
    "ability_gain_rate": check_gain,
    "composite_smoothness": check_composite,
}
SYNTHETIC_CHECKS = {
    "gradient_tail": check_gradient_tail,
    "double_exp_tail": check_double_exp_tail,
    "toll_concentration": check_toll_concentration,
}
REGISTRY = {**TRACE_CHECKS, **SYNTHETIC_CHECKS}
# the literal toll-concentration envelope is opt-in; see the README
DEFAULT_CHECKS = [n for n in REGISTRY if n != "toll_concentration"]


def verify(trace_paths, checks=None) -> StatReport:
    checks = DEFAULT_CHECKS if checks is None else list(checks)
    unknown = [c for c in checks if c not in REGISTRY]
    if unknown:
        raise KeyError(f"unknown checks: {unknown}")
    report = StatReport()
    traces = [load_trace(p) if not isinstance(p, Trace) else p for p in trace_paths]
    for name in checks:
        fn = REGISTRY[name]
        if name in SYNTHETIC_CHECKS:
            report.results.append(_result(name, fn(), "synthetic"))
            continue
        for tr in traces:
            report.results.append(_result(name, fn(tr), tr.path))
    return report


def _result(name, res, source) -> CheckResult:
    stat, bound, ok, n, note = res
    return CheckResult(name, float(stat), float(bound), bool(ok), int(n), source=source, note=note)


def capability_across_seeds(traces, min_pass: int = 4) -> CheckResult:
    """Quasi-monotonicity as a multi-seed statistic: at least ``min_pass`` runs
    end at or above their initial capability with the negative budget met."""
    passes = 0
    for tr in traces:
        neg, final_ok = capability_stats(tr)
        passes += int(final_ok and neg <= tr.s("neg_budget"))
    return CheckResult("capability_across_seeds", passes, min_pass, passes >= min_pass, len(traces),
                       source="sweep")
