"""The closed-loop step: environment, metacognition, emotion drive, meaning
metrics, reward, trigger, self-modification, goals, training and audits.

``run`` returns a :class:`RunResult` holding the formatted trace rows and a
summary mapping; ``write_trace`` serializes both.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import env as E
from .config import RunConfig
from .emotion import ClipState, MetaVector, clipped_gradient, potential, scalar_drive
from .goals import GoalLedger, GoalProbes, filter_accept, generate, realized_gain, replay_noise, score, task_capability
from .meaning import NoveltyCounter, mce, mdl_complexity, meaning_density, mi_plugin
from .metacognition import lambda_map_batch, success_update
from .reward import EligibilityTrace, baseline_bonus, compose, dg_update, event_spikes, md_mce_bonus
from .safety import TollVector, audit, make_safety_state, toll_update
from .selfmod import (
    CapabilityProbe,
    ModState,
    ability_gain_check,
    apply_modification,
    capability,
    estimate_beta,
    rsi_trigger,
)

log = logging.getLogger(__name__)

COLUMNS = [
    "t", "c", "e", "n", "S", "f_base", "eps_t", "grad_norm_pre", "grad_norm_post",
    "i_pred", "md", "mce", "delta_s", "fired", "phase_shift",
    "base_f", "spikes", "penalty", "dg_bonus", "baseline_bonus", "md_bonus",
    "mce_bonus", "external_mixed", "total",
    "capability", "goals_active", "goals_noise", "toll_l1", "in_region",
    # diagnostics beyond the fixed core
    "k_max", "r_ext", "batch_acc", "i_md", "k_bits", "z_dg", "h_norm", "mod_step",
    "gain_ok", "rule_id", "cooldown", "goal_batch", "goals_promoted", "goals_discarded",
    "toll_events",
]
INT_COLUMNS = {
    "t", "fired", "phase_shift", "goals_active", "goals_noise", "in_region",
    "gain_ok", "rule_id", "cooldown", "goal_batch", "goals_promoted", "goals_discarded",
    "toll_events",
}
TOLL_CHANNELS = ("misinformation", "phase_shift", "utility_veto", "skipped_update")


class RunAborted(RuntimeError):
    def __init__(self, step: int, reason: str):
        self.step = step
        super().__init__(f"run aborted at step {step}: {reason}")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


@dataclass
class RunResult:
    rows: list  # list of lists of formatted strings, in COLUMNS order
    summary: dict
    reports: list = field(default_factory=list)
    ledger: GoalLedger | None = None
    elapsed: float = 0.0

    def column(self, name: str) -> np.ndarray:
        j = COLUMNS.index(name)
        return np.array([float(r[j]) for r in self.rows])


def _flags(scripted, acc, e_now, e_prev, self_err, i_pred, i_best):
    return [
        scripted[0] and acc >= 0.5,  # transmission success
        e_now < e_prev - 0.02,  # misunderstanding repair
        self_err,  # self-error recognition
        i_pred > i_best + 0.01,  # structure discovery: new high in predictive information
        scripted[1],  # co-creation
    ]


def run(cfg: RunConfig, steps: int | None = None) -> RunResult:
    # every matrix here is tiny; BLAS thread start-up costs more than it saves
    with threadpool_limits(limits=1):
        return _run(cfg, steps)


def _run(cfg: RunConfig, steps: int | None) -> RunResult:
    t_start = time.perf_counter()
    steps = cfg.steps if steps is None else steps
    ecfg = cfg.env
    k_classes = ecfg.num_classes
    w_emo = cfg.emotion
    weights = cfg.reward

    env = E.reset(ecfg)
    model = E.Predictor.init(ecfg, np.random.default_rng([cfg.seed, 1]))
    bl_rng = np.random.default_rng([cfg.seed, 2])
    goal_rng = np.random.default_rng([cfg.seed, 3])
    beta_rng = np.random.default_rng([cfg.seed, 4])

    probe = CapabilityProbe(*E.probe_set(ecfg, salt=1))
    intro_obs, intro_labels = E.probe_set(ecfg, families=ecfg.active_families(0), n=ecfg.n_introspect, salt=2)
    goal_probes = GoalProbes(ecfg, n=cfg.goal.probe_size)
    ledger = GoalLedger(
        utility_table=dict(cfg.goal.utility), gamma_goal=cfg.goal.gamma_goal,
        p_gen=cfg.goal.p_gen, k_rollouts=cfg.goal.k_rollouts, n_difficulty=cfg.goal.n_difficulty,
    )

    clip_state = ClipState(warmup_len=cfg.warmup_t0)
    mod = ModState(step_scale=cfg.mod.eta_m, lipschitz_cap=cfg.mod.l_m)
    toll = TollVector.seeded(cfg.safety.thresholds, cfg.safety.eta_max)
    m0_l1 = toll.l1()
    toll_counts = np.zeros(toll.d, dtype=int)
    novelty = NoveltyCounter()
    novelty.update(env.boot)
    trace_z = EligibilityTrace()

    v = MetaVector()  # boot state
    safety = None
    gamma_est = float("nan")
    config_warnings = []
    in_region = True
    reports = []
    post_window = []

    win_p = deque()
    win_y = deque()
    win_n = 0
    i_prev = 0.0
    i_best = -math.inf
    prior_intro = None
    prev_wrong = None

    c_init = capability(model, probe)
    c_prev = c_init
    h0_norm = float(np.linalg.norm(model.rep_vector()))
    stats = dict(fired=0, phase=0, gain_viol=0, rsi_steps=0, skipped_mod=0, skipped_train=0)
    rows = []

    for t in range(steps):
        out = E.step(env, t)
        h, probs = E.predict(model, out.obs)
        yhat = probs.argmax(axis=1)
        acc = float(np.mean(yhat == out.labels))

        # self-error recognition: did the current model move toward the labels it got wrong last step?
        self_err = False
        if prev_wrong is not None:
            obs_w, lab_w, p_before = prev_wrong
            _, pw = E.predict(model, obs_w)
            self_err = bool(np.mean(pw[np.arange(len(lab_w)), lab_w]) > p_before)
        wrong = yhat != out.labels
        prev_wrong = None
        if wrong.any():
            prev_wrong = (out.obs[wrong], out.labels[wrong],
                          float(np.mean(probs[np.flatnonzero(wrong), out.labels[wrong]])))

        # metacognition on the self-query set; prior = last step's model
        _, p_intro = E.predict(model, intro_obs)
        prior = p_intro if prior_intro is None else prior_intro
        lam = lambda_map_batch(p_intro, intro_labels, prior, v, cfg.confidence_variant)
        prior_intro = p_intro
        r_ext = E.external_reward(env, acc)
        s_new = success_update(v.s, r_ext, cfg.lambda_s)
        v_new = MetaVector.clamped(lam.c, lam.e, lam.n, s_new)
        dv = v_new.as_array() - v.as_array()

        k_max_now = clip_state.k_max
        g_clip, pre_norm = clipped_gradient(v_new, w_emo, k_max_now)
        post_norm = float(np.linalg.norm(g_clip))
        post_window.append(post_norm)
        eps = scalar_drive(g_clip, dv)
        if clip_state.observe(pre_norm):
            beta_hat = estimate_beta(model, probe, beta_rng, cfg.mod.beta_samples, cfg.mod.beta_radius)
            gamma_est = beta_hat / cfg.mod.l_m
            safety, weights, config_warnings, errors = make_safety_state(gamma_est, clip_state.k_max, cfg.reward)
            if errors:
                raise RunAborted(t, "; ".join(errors))

        # predictive information over the sliding window
        win_p.append(probs)
        win_y.append(out.labels)
        win_n += len(out.labels)
        while win_n - len(win_y[0]) >= cfg.mi_window:
            win_n -= len(win_y[0])
            win_p.popleft()
            win_y.popleft()
        dists = np.concatenate(win_p)[-cfg.mi_window:]
        ys = np.concatenate(win_y)[-cfg.mi_window:]
        marg = np.bincount(ys, minlength=k_classes) / len(ys)
        i_pred = mi_plugin(dists, ys, marg).value
        yh = dists.argmax(axis=1)
        i_md = mi_plugin(dists, yh, np.bincount(yh, minlength=k_classes) / len(yh)).value
        k_est = mdl_complexity(h.mean(axis=0))
        md = meaning_density(i_md, k_est)
        delta_s = 0.0
        for row in out.obs:
            delta_s += novelty.update(E.obs_bytes(row))
        # information terms enter the conversion ratio on their nonnegative range
        mce_v = mce(max(i_pred, 0.0), max(i_prev, 0.0), delta_s)

        flags = _flags(out.scripted, acc, lam.e, v.e, self_err, i_pred, i_best)
        misinfo = bool(np.any((probs.max(axis=1) >= 0.95) & wrong))
        if t >= cfg.warmup_t0:
            i_best = max(i_best, i_pred)

        # reward
        f_base = potential(v_new, w_emo)
        spikes, penalty = event_spikes(flags, misinfo, weights)
        trace_z, dg = dg_update(trace_z, f_base, weights)
        bl = baseline_bonus(float(bl_rng.random()), weights)
        md_b, mce_b = md_mce_bonus(md, mce_v, weights)
        rb = compose(f_base, r_ext, weights, ecfg.r_max, spikes, penalty, dg, bl, md_b, mce_b)

        # trigger and self-modification
        dec = rsi_trigger(eps, i_pred, cfg.gamma, mod.cooldown)
        step_norm = 0.0
        gain_ok = True
        promoted = 0
        toll_eta = np.zeros(toll.d)
        events = np.zeros(toll.d, dtype=bool)
        events[0] = misinfo
        if dec.fired:
            stats["fired"] += 1
            c_before = c_prev  # model unchanged since the last capability read
            _, grad = E.soft_accuracy_grad(model, probe.obs, probe.labels)
            direction = E.rule_direction(mod.update_rule_id, grad, model.slots, "rep")
            theta = model.rep_vector()
            theta_new, mod, step_norm = apply_modification(theta, eps, direction, mod, dec.phase_shift)
            if step_norm == 0.0:
                stats["skipped_mod"] += 1
                events[3] = True
                log.warning("step %d: modification skipped (non-finite direction)", t)
            else:
                model.set_rep_vector(theta_new)
                model.rule_id = mod.update_rule_id
                if dec.phase_shift:
                    stats["phase"] += 1
                    events[1] = True
                c_after = capability(model, probe)
                g_lb = gamma_est if math.isfinite(gamma_est) else 0.0
                gain_ok = ability_gain_check(c_before, c_after, eps, g_lb, cfg.mod.tol_gain)
                stats["gain_viol"] += int(not gain_ok)
                promoted = len(replay_noise(
                    ledger, lambda gs, refs: realized_gain(model, gs, refs, goal_probes), t))
        mod = mod.tick()

        # goal proposals
        batch_flag = 0
        n_discarded = 0
        cands = generate(float(goal_rng.random()), ledger, c_prev, goal_rng)
        if cands:
            batch_flag = 1
            ledger.batches.append((t, list(cands)))
            scores, refs = [], []
            for gl in cands:
                if ledger.utility_table.get(gl.family_id, -1.0) < 0:
                    scores.append(float("nan"))
                    refs.append(float("nan"))
                else:
                    scores.append(score(model, gl, eps, mod, goal_probes, ledger.k_rollouts, goal_rng)[0])
                    refs.append(task_capability(model, *goal_probes(gl)))
            _, _, disc = filter_accept(cands, scores, ledger, t, refs)
            n_discarded = len(disc)
            events[2] = n_discarded > 0

        # learning
        _, applied = E.train_step(model, out.obs, out.labels, ecfg.lr_at(t), model.rule_id)
        if not applied:
            stats["skipped_train"] += 1
            events[3] = True
            log.warning("step %d: training step skipped (non-finite loss)", t)

        # habituating toll charges: the k-th event on a channel costs eta_max * decay^k
        for j in np.flatnonzero(events):
            toll_eta[j] = toll.eta_max * cfg.safety.toll_decay ** toll_counts[j]
            toll_counts[j] += 1
        toll = toll_update(toll, toll_eta)

        c_now = capability(model, probe)
        if (t + 1) % cfg.audit_every == 0 or t == steps - 1:
            if safety is not None:
                rep = audit(post_window, safety, toll, m0_l1, t + 1, weights.xi_dg, weights.xi_bl, step=t)
                reports.append(rep)
                in_region = rep.in_region
                if not in_region:
                    log.warning("step %d: safety audit failed: %s", t, ", ".join(rep.failed()))
            post_window = []

        rows.append([fmt(x) for x in (
            t, v_new.c, v_new.e, v_new.n, v_new.s, f_base, eps, pre_norm, post_norm,
            i_pred, md, mce_v, delta_s, dec.fired, dec.phase_shift,
            rb.base_f, rb.spikes, rb.penalty, rb.dg_bonus, rb.baseline_bonus, rb.md_bonus,
            rb.mce_bonus, rb.external_mixed, rb.total,
            c_now, len(ledger.active), len(ledger.noise), toll.l1(), in_region,
            k_max_now, r_ext, acc, i_md, k_est.bits, trace_z.z,
            float(np.linalg.norm(model.rep_vector())), step_norm,
            gain_ok, mod.update_rule_id, mod.cooldown, batch_flag, promoted, n_discarded,
            int(events.sum()),
        )])

        v = v_new
        i_prev = i_pred
        c_prev = c_now

    admissible, eventually = ledger.batch_outcomes()
    total_j = COLUMNS.index("total")
    cum = 0.0
    for r in rows:
        cum += float(r[total_j])
    summary = {
        "steps": steps,
        "seed": cfg.seed,
        "gamma": cfg.gamma,
        "warmup_t0": cfg.warmup_t0,
        "audit_every": cfg.audit_every,
        "r_max": ecfg.r_max,
        "k_max": clip_state.k_max,
        "k_max_calibrated": clip_state.calibrated,
        "gamma_est": gamma_est,
        "alpha": cfg.reward.alpha,
        "alpha_star": safety.alpha_star if safety else float("nan"),
        "xi_dg": weights.xi_dg,
        "xi_bl": weights.xi_bl,
        "cap_dg": safety.xi_caps[0] if safety else float("nan"),
        "cap_bl": safety.xi_caps[1] if safety else float("nan"),
        "l0_ext": cfg.safety.l0_ext,
        "eta_m": cfg.mod.eta_m,
        "l_m": cfg.mod.l_m,
        "lambda_dg": weights.lambda_dg,
        "num_classes": k_classes,
        "v_min": cfg.v_min,
        "p_grad_floor": cfg.p_grad_floor,
        "neg_budget": cfg.mod.neg_budget,
        "p_gen": cfg.goal.p_gen,
        "eta_max": cfg.safety.eta_max,
        "d_toll": toll.d,
        "toll_m0_l1": m0_l1,
        "toll_final_l1": toll.l1(),
        "initial_capability": c_init,
        "h0_norm": h0_norm,
        "rsi_count": stats["fired"],
        "phase_shifts": stats["phase"],
        "gain_violations": stats["gain_viol"],
        "skipped_modifications": stats["skipped_mod"],
        "skipped_training": stats["skipped_train"],
        "injected_batches": len(ledger.batches),
        "admissible_batches": admissible,
        "batches_eventually_accepted": eventually,
        "goals_active": len(ledger.active),
        "goals_noise": len(ledger.noise),
        "goals_discarded": len(ledger.discarded),
        "goals_proposed": len(ledger.proposed),
        "promotions": ledger.promotions,
        "ledger_audit": ledger.audit(),
        "audits": len(reports),
        "audits_in_region": sum(r.in_region for r in reports),
        "cumulative_reward": cum,
        "config_warnings": " | ".join(config_warnings),
    }
    return RunResult(rows, summary, reports, ledger, time.perf_counter() - t_start)


def summary_text(summary: dict) -> str:
    lines = []
    for k, val in summary.items():
        if isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = repr(val)  # round-trips exactly
        lines.append(f"{k}={val}")
    return "\n".join(lines) + "\n"


def write_trace(result: RunResult, path) -> Path:
    """CSV trace plus a ``<path>.summary`` key-value sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for r in result.rows:
            fh.write(",".join(r) + "\n")
    Path(str(path) + ".summary").write_text(summary_text(result.summary), encoding="utf-8")
    return path


FIG3_STEPS = 150


def crossing_and_rate(i_pred, fired, gamma: float):
    """First step with ``i_pred > gamma`` and the fired fraction after it."""
    cross = next((i for i, x in enumerate(i_pred) if x > gamma), None)
    if cross is None:
        return None, float("nan")
    after = np.asarray(fired[cross + 1 :], dtype=float)
    return cross, float(after.mean()) if after.size else float("nan")


def fig3(cfg: RunConfig, out_path=None):
    """150-step run: crossing step of the information curve, post-crossing
    activity rate, and an SVG of I_pred against the threshold."""
    from .plot import line_plot_svg, write_svg

    if cfg.steps < FIG3_STEPS:
        raise ValueError(f"fig3 needs cfg.steps >= {FIG3_STEPS}")
    res = run(cfg, steps=FIG3_STEPS)
    i_pred = res.column("i_pred")
    cross, rate = crossing_and_rate(i_pred, res.column("fired"), cfg.gamma)
    path = None
    if out_path is not None:
        svg = line_plot_svg(list(range(len(i_pred))), list(i_pred), level=cfg.gamma,
                            title="predictive information over the first 150 steps",
                            ylabel="I_pred (nats)")
        path = write_svg(out_path, svg)
    return cross, rate, path, res
