"""Autonomous goal generation, improvement scoring, utility filtering and the
NOISE replay buffer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .env import EnvConfig, Predictor, family_means, predict, soft_accuracy_grad
from .selfmod import ModState, apply_modification


class Goal(NamedTuple):
    family_id: int
    difficulty: int
    params: int


@dataclass
class GoalLedger:
    utility_table: dict
    gamma_goal: float = 0.01
    p_gen: float = 0.1
    k_rollouts: int = 4
    n_difficulty: int = 4
    active: dict = field(default_factory=dict)  # Goal -> step accepted (insertion ordered)
    noise: dict = field(default_factory=dict)  # Goal -> (rejected_at, last_score, capability at rejection)
    discarded: dict = field(default_factory=dict)  # Goal -> step vetoed
    proposed: set = field(default_factory=set)
    batches: list = field(default_factory=list)  # (step, [goals])
    promotions: int = 0

    def __post_init__(self):
        if not 0.0 < self.p_gen <= 1.0:
            raise ValueError("p_gen must lie in (0, 1]")
        if self.k_rollouts < 1:
            raise ValueError("k_rollouts must be >= 1")

    def status(self, goal: Goal) -> str:
        if goal in self.active:
            return "active"
        if goal in self.noise:
            return "noise"
        if goal in self.discarded:
            return "discarded"
        return "never-proposed"

    def audit(self) -> bool:
        """Every proposed goal sits in exactly one bucket."""
        a, n, d = set(self.active), set(self.noise), set(self.discarded)
        disjoint = not (a & n or a & d or n & d)
        return disjoint and (a | n | d) == self.proposed

    def batch_outcomes(self):
        """(batches with an admissible goal, of those how many got a goal accepted)."""
        admissible = 0
        accepted = 0
        for _, goals in self.batches:
            ok = [g for g in goals if self.utility_table.get(g.family_id, 0.0) >= 0]
            if not ok:
                continue
            admissible += 1
            if any(g in self.active for g in ok):
                accepted += 1
        return admissible, accepted


class GoalProbes:
    """Labelled probe sets for goals.

    Each (family, difficulty) cell owns a frozen pool of samples; a goal's
    probe is a fixed subset of its cell's pool chosen by ``params``. Sharing
    pools lets many goals be evaluated with one forward pass per cell.
    """

    def __init__(self, cfg: EnvConfig, n: int = 64, pool: int = 256, sigma_step: float = 0.25):
        if n > pool:
            raise ValueError("goal probe size exceeds pool size")
        self.cfg = cfg
        self.n = n
        self.pool_size = pool
        self.sigma_step = sigma_step
        self.means = family_means(cfg)
        self._pools = {}
        self._idx = {}

    def pool(self, family_id: int, difficulty: int):
        key = (family_id, difficulty)
        if key not in self._pools:
            if not 0 <= family_id < self.means.shape[0]:
                raise KeyError(f"no probe generator for goal family {family_id}")
            rng = np.random.default_rng([self.cfg.seed, 0x60, family_id, difficulty])
            labels = np.arange(self.pool_size) % self.cfg.num_classes
            sigma = self.cfg.noise_sigma * (1.0 + self.sigma_step * difficulty)
            obs = self.means[family_id, labels] + sigma * rng.standard_normal((self.pool_size, self.cfg.d_o))
            self._pools[key] = (obs, labels)
        return self._pools[key]

    def indices(self, goal: Goal) -> np.ndarray:
        if goal not in self._idx:
            rng = np.random.default_rng([self.cfg.seed, 0x61, goal.params])
            self._idx[goal] = np.sort(rng.choice(self.pool_size, self.n, replace=False))
        return self._idx[goal]

    def __call__(self, goal: Goal):
        obs, labels = self.pool(goal.family_id, goal.difficulty)
        idx = self.indices(goal)
        return obs[idx], labels[idx]


def task_capability(model: Predictor, obs, labels) -> float:
    """Expected task accuracy: mean predicted probability of the true label."""
    _, probs = predict(model, obs)
    return float(np.mean(probs[np.arange(len(labels)), labels]))


def generate(rng_draw: float, ledger: GoalLedger, cap: float, rng) -> list:
    """Bernoulli(p_gen) gate, then 1-3 fresh goals at the capability-bucket difficulty."""
    if rng_draw >= ledger.p_gen:
        return []
    families = sorted(ledger.utility_table)
    level = min(int(cap * ledger.n_difficulty), ledger.n_difficulty - 1)
    out = []
    for _ in range(int(rng.integers(1, 4))):
        while True:
            g = Goal(int(families[rng.integers(0, len(families))]), level, int(rng.integers(0, 2**31)))
            if g not in ledger.active and g not in out:
                break
        out.append(g)
    return out


def mc_gain(preview, k_rollouts: int, rng):
    """Mean and standard error of ``k_rollouts`` draws of ``preview(rng)``."""
    if k_rollouts < 1:
        raise ValueError("k_rollouts must be >= 1")
    gains = np.array([preview(rng) for _ in range(k_rollouts)], dtype=float)
    se = float(gains.std(ddof=1) / math.sqrt(len(gains))) if len(gains) > 1 else 0.0
    return float(gains.mean()), se


def score(model: Predictor, goal: Goal, epsilon_t: float, mod: ModState, probes: GoalProbes,
          k_rollouts: int, rng):
    """Monte-Carlo preview of the modification's effect on the goal's capability.

    Each rollout takes the ascent direction from a random half of the goal's
    probe and applies a non-committing modification step. Returns (mean, stderr).
    """
    obs, labels = probes(goal)
    if not epsilon_t > 0:
        return 0.0, 0.0
    before = task_capability(model, obs, labels)
    theta = model.rep_vector()
    trial = model.copy()

    def preview(r):
        idx = r.permutation(len(labels))[: max(len(labels) // 2, 1)]
        _, d = soft_accuracy_grad(model, obs[idx], labels[idx])
        h_new, _, _ = apply_modification(theta, epsilon_t, d, mod)
        trial.set_rep_vector(h_new)
        return task_capability(trial, obs, labels) - before

    return mc_gain(preview, k_rollouts, rng)


def filter_accept(cands, scores, ledger: GoalLedger, t: int, refs=None):
    """Split scored candidates into accepted / noised / discarded and update the ledger.

    Negative utility is a permanent veto; a low score sends the goal to NOISE
    together with ``refs[i]``, its capability at rejection time.
    """
    accepted, noised, discarded = [], [], []
    refs = [float("nan")] * len(cands) if refs is None else list(refs)
    for goal, g, ref in zip(cands, scores, refs):
        ledger.proposed.add(goal)
        if ledger.utility_table.get(goal.family_id, -1.0) < 0:
            ledger.noise.pop(goal, None)
            ledger.discarded[goal] = t
            discarded.append(goal)
        elif g >= ledger.gamma_goal:
            if ledger.noise.pop(goal, None) is not None:
                ledger.promotions += 1
            ledger.active.setdefault(goal, t)
            accepted.append(goal)
        elif goal in ledger.active:
            # acceptance is permanent; a low re-score does not demote
            accepted.append(goal)
        else:
            old = ledger.noise.get(goal, (t, g, ref))
            ledger.noise[goal] = (old[0], g, old[2])
            noised.append(goal)
    return accepted, noised, discarded


def replay_noise(ledger: GoalLedger, rescore, t: int) -> list:
    """Re-score every buffered goal; promote those now clearing ``gamma_goal``.

    ``rescore(goals, refs)`` returns one score per goal, where ``refs`` are the
    capabilities recorded when each goal was rejected.
    """
    goals = list(ledger.noise)
    if not goals:
        return []
    scores = rescore(goals, [ledger.noise[g][2] for g in goals])
    promoted = []
    for goal, g in zip(goals, scores):
        rejected_at, _, ref = ledger.noise[goal]
        if g >= ledger.gamma_goal:
            del ledger.noise[goal]
            ledger.active.setdefault(goal, t)
            ledger.promotions += 1
            promoted.append(goal)
        else:
            ledger.noise[goal] = (rejected_at, float(g), ref)
    return promoted


def realized_gain(model: Predictor, goals, refs, probes: GoalProbes) -> np.ndarray:
    """Capability of the (already modified) model on each goal minus the
    capability recorded at rejection; one forward pass per probe cell."""
    out = np.zeros(len(goals))
    cells = {}
    for i, g in enumerate(goals):
        cells.setdefault((g.family_id, g.difficulty), []).append(i)
    for (fam, diff), members in cells.items():
        obs, labels = probes.pool(fam, diff)
        _, probs = predict(model, obs)
        pt = probs[np.arange(len(labels)), labels]
        idx = np.stack([probes.indices(goals[i]) for i in members])
        out[members] = pt[idx].mean(axis=1)
    return out - np.asarray(refs, dtype=float)
