"""Toy substrate: Gaussian class clusters from scheduled task families, a
two-layer tanh predictor, event-flag detectors and a bounded external reward.

Task families share the label space. Family ``f`` becomes part of the stream at
its scheduled start step; from then on samples are drawn uniformly over the
active families, so each introduction is a distribution shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metacognition import floor_normalize

RULES = ("plain", "momentum", "adaptive")
# Per-rule multiplier on the configured learning rate; Adagrad steps are
# O(1) per coordinate at first and need damping.
RULE_SCALE = {"plain": 1.0, "momentum": 1.0, "adaptive": 0.1}


@dataclass
class EnvConfig:
    num_classes: int = 4
    d_h: int = 32
    d_o: int = 16
    r_max: float = 1.0
    delta_bias: float = 0.05
    reward_bias: float = 0.0
    reward_gain: float = 0.02
    task_schedule: tuple = ((0, 0), (1, 1000), (2, 2000), (3, 3000))
    n_families: int = 4
    seed: int = 42
    batch_size: int = 16
    cluster_sep: float = 3.0
    noise_sigma: float = 1.0
    lr: float = 0.02
    lr_decay_steps: float = 500.0  # 0 disables; else lr_t = lr / (1 + t / lr_decay_steps)
    init_scale: float = 1.0
    transmit_rate: float = 0.1
    cocreate_rate: float = 0.05
    n_probe: int = 256
    n_introspect: int = 64

    def __post_init__(self):
        self.task_schedule = tuple(tuple(int(x) for x in p) for p in self.task_schedule)
        problems = []
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        if not self.r_max > self.delta_bias >= 0:
            problems.append("need r_max > delta_bias >= 0")
        if abs(self.reward_bias) + abs(self.reward_gain) > self.delta_bias:
            # the centred accuracy term shifts conditional means by up to reward_gain
            problems.append("|reward_bias| + |reward_gain| must not exceed delta_bias")
        if not self.task_schedule:
            problems.append("task_schedule is empty")
        for fam, _ in self.task_schedule:
            if not 0 <= fam < self.n_families:
                problems.append(f"family {fam} outside registry of {self.n_families}")
        if self.lr < 0 or self.lr_decay_steps < 0:
            problems.append("lr and lr_decay_steps must be nonnegative")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if problems:
            raise ValueError("invalid EnvConfig: " + "; ".join(problems))

    def lr_at(self, t: int) -> float:
        if self.lr_decay_steps <= 0:
            return self.lr
        return self.lr / (1.0 + t / self.lr_decay_steps)

    def active_families(self, t: int) -> list:
        fams = sorted({f for f, start in self.task_schedule if start <= t})
        if not fams:
            fams = [min(self.task_schedule, key=lambda p: p[1])[0]]
        return fams

    def scheduled_families(self) -> list:
        return sorted({f for f, _ in self.task_schedule})


def boot_bytes(seed: int) -> bytes:
    """Byte rendering of the boot observation."""
    return f'("SYSTEM_BOOT", seed={int(seed)}, prompt=<SELF_QUERY>)'.encode("utf-8")


def family_means(cfg: EnvConfig) -> np.ndarray:
    """Class centres, shape (n_families, num_classes, d_o); fixed by the seed."""
    rng = np.random.default_rng([cfg.seed, 0xFA])
    raw = rng.standard_normal((cfg.n_families, cfg.num_classes, cfg.d_o))
    raw /= np.linalg.norm(raw, axis=-1, keepdims=True)
    return cfg.cluster_sep * raw


def sample_family(means, family, n, rng, sigma, labels=None):
    k = means.shape[1]
    if labels is None:
        labels = rng.integers(0, k, size=n)
    obs = means[family, labels] + sigma * rng.standard_normal((n, means.shape[2]))
    return obs, np.asarray(labels)


def obs_bytes(obs) -> bytes:
    """Coarse byte rendering of real observations for novelty counting."""
    q = np.clip(np.floor(np.asarray(obs, dtype=float) + 8.0), 0, 15).astype(np.uint8)
    return q.tobytes()


@dataclass
class Predictor:
    """Two-layer network: representation (w1, b1) and readout (w2, b2)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    rule_id: int = 0
    slots: dict = field(default_factory=dict)

    @classmethod
    def init(cls, cfg: EnvConfig, rng) -> "Predictor":
        s = cfg.init_scale
        return cls(
            w1=rng.standard_normal((cfg.d_h, cfg.d_o)) * s / math.sqrt(cfg.d_o),
            b1=np.zeros(cfg.d_h),
            w2=np.zeros((cfg.num_classes, cfg.d_h)),
            b2=np.zeros(cfg.num_classes),
        )

    def copy(self) -> "Predictor":
        return Predictor(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
            self.rule_id, {k: v.copy() for k, v in self.slots.items()},
        )

    # the self-modifiable part of the agent
    def rep_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1])

    def set_rep_vector(self, theta) -> None:
        n = self.w1.size
        self.w1 = np.asarray(theta[:n], dtype=float).reshape(self.w1.shape).copy()
        self.b1 = np.asarray(theta[n:], dtype=float).copy()

    def hidden(self, obs) -> np.ndarray:
        return np.tanh(np.atleast_2d(obs) @ self.w1.T + self.b1)

    def head(self, h) -> np.ndarray:
        logits = np.atleast_2d(h) @ self.w2.T + self.b2
        logits -= logits.max(axis=-1, keepdims=True)
        p = np.exp(logits)
        return floor_normalize(p / p.sum(axis=-1, keepdims=True))


def predict(p: Predictor, obs):
    """Hidden activations and floored predictive distributions for a batch."""
    h = p.hidden(obs)
    return h, p.head(h)


def readout_grads(p: Predictor, obs, labels):
    h, probs = predict(p, obs)
    n = len(labels)
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    loss = float(-np.mean(np.log(probs[np.arange(n), labels])))
    return loss, delta.T @ h, delta.sum(axis=0)


def soft_accuracy_grad(p: Predictor, obs, labels):
    """Mean probability of the true label and its gradient w.r.t. (w1, b1)."""
    labels = np.asarray(labels)
    n = len(labels)
    h, probs = predict(p, obs)
    pt = probs[np.arange(n), labels]
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    # d p_y / d logits = p_y (onehot - p)
    dlogits = (pt[:, None] * (onehot - probs)) / n
    dh = dlogits @ p.w2
    dz = dh * (1.0 - h * h)
    g = np.concatenate([(dz.T @ np.atleast_2d(obs)).ravel(), dz.sum(axis=0)])
    return float(pt.mean()), g


def rule_direction(rule_id: int, g, slots: dict, key: str, beta=0.9, eps=1e-8):
    """Transform a raw gradient by one of the registry's update rules."""
    rule = RULES[rule_id % len(RULES)]
    if rule == "plain":
        return g
    if rule == "momentum":
        m = slots.get(key + ".m")
        m = g.copy() if m is None else beta * m + (1.0 - beta) * g
        slots[key + ".m"] = m
        return m
    acc = slots.get(key + ".G")
    acc = g * g if acc is None else acc + g * g
    slots[key + ".G"] = acc
    return g / (np.sqrt(acc) + eps)


def train_step(p: Predictor, obs, labels, lr: float, rule_id: int | None = None):
    """One cross-entropy step on the readout under the selected rule.

    Returns (loss, applied). Non-finite losses leave the predictor untouched.
    """
    rule_id = p.rule_id if rule_id is None else rule_id
    loss, gw, gb = readout_grads(p, obs, labels)
    if not (math.isfinite(loss) and np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
        return loss, False
    g = np.concatenate([gw.ravel(), gb])
    d = rule_direction(rule_id, g, p.slots, "readout") * RULE_SCALE[RULES[rule_id % len(RULES)]]
    w_new = np.concatenate([p.w2.ravel(), p.b2]) - lr * d
    if not np.all(np.isfinite(w_new)):
        return loss, False
    p.w2 = w_new[: p.w2.size].reshape(p.w2.shape)
    p.b2 = w_new[p.w2.size :]
    return loss, True


def accuracy(p: Predictor, obs, labels) -> float:
    _, probs = predict(p, obs)
    return float(np.mean(np.argmax(probs, axis=-1) == np.asarray(labels)))


@dataclass
class EnvState:
    cfg: EnvConfig
    means: np.ndarray
    rng: np.random.Generator
    boot: bytes
    acc_ema: float | None = None
    t: int = 0


@dataclass
class StepOutput:
    obs: np.ndarray
    labels: np.ndarray
    families: np.ndarray
    scripted: tuple  # (transmission event, co-creation event)


def reset(cfg: EnvConfig) -> EnvState:
    rng = np.random.default_rng([cfg.seed, 0xE7])
    return EnvState(cfg=cfg, means=family_means(cfg), rng=rng, boot=boot_bytes(cfg.seed))


def step(env: EnvState, t: int) -> StepOutput:
    cfg = env.cfg
    fams = np.asarray(cfg.active_families(t))
    fam_idx = fams[env.rng.integers(0, len(fams), size=cfg.batch_size)]
    labels = env.rng.integers(0, cfg.num_classes, size=cfg.batch_size)
    noise = env.rng.standard_normal((cfg.batch_size, cfg.d_o))
    obs = env.means[fam_idx, labels] + cfg.noise_sigma * noise
    scripted = (
        bool(env.rng.random() < cfg.transmit_rate),
        bool(env.rng.random() < cfg.cocreate_rate),
    )
    env.t = t
    return StepOutput(obs, labels, fam_idx, scripted)


def external_reward(env: EnvState, batch_acc: float) -> float:
    """Accuracy-derived reward centred on a running baseline, plus the
    configured bias; clamped to [-r_max, r_max]."""
    cfg = env.cfg
    base = batch_acc if env.acc_ema is None else env.acc_ema
    r = cfg.reward_bias + cfg.reward_gain * (batch_acc - base)
    env.acc_ema = batch_acc if env.acc_ema is None else 0.9 * env.acc_ema + 0.1 * batch_acc
    return float(min(max(r, -cfg.r_max), cfg.r_max))


def probe_set(cfg: EnvConfig, families=None, n=None, sigma=None, salt=0):
    """Frozen labelled sample set, balanced over classes and the given families."""
    families = cfg.scheduled_families() if families is None else list(families)
    n = cfg.n_probe if n is None else n
    sigma = cfg.noise_sigma if sigma is None else sigma
    rng = np.random.default_rng([cfg.seed, 0x9B, salt])
    means = family_means(cfg)
    labels = np.arange(n) % cfg.num_classes
    fams = np.asarray(families)[(np.arange(n) // cfg.num_classes) % len(families)]
    obs = means[fams, labels] + sigma * rng.standard_normal((n, cfg.d_o))
    return obs, labels
