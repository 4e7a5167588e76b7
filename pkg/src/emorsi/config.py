"""Run configuration: dataclasses, TOML loading with strict key checking, and a
renderer for the default file.

The file format is TOML with one table per section::

    [run]
    steps = 10000
    gamma = 0.1

    [reward]
    alpha = 0.1

Unknown sections or keys are rejected with an itemized error.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .emotion import EmotionWeights
from .env import EnvConfig
from .reward import ChannelWeights


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass
class GoalParams:
    gamma_goal: float = 0.01
    p_gen: float = 0.1
    k_rollouts: int = 4
    n_difficulty: int = 4
    probe_size: int = 64
    # family -> utility; the last family is the designated forbidden one
    utility: dict = field(default_factory=lambda: {0: 1.0, 1: 1.0, 2: 1.0, 3: -1.0})


@dataclass
class ModParams:
    eta_m: float = 40.0
    l_m: float = 0.05
    beta_radius: float = 0.2
    beta_samples: int = 100
    tol_gain: float = 0.02
    neg_budget: float = 2.0


@dataclass
class SafetyParams:
    d_toll: int = 4
    eta_max: float = 0.01
    thresholds: tuple = (1.0, 1.0, 1.0, 1.0)
    toll_decay: float = 0.5
    l0_ext: float = 0.02


@dataclass
class RunConfig:
    steps: int = 10_000
    seed: int = 42
    warmup_t0: int = 16
    gamma: float = 0.1
    mi_window: int = 64
    audit_every: int = 100
    lambda_s: float = 0.9
    confidence_variant: str = "entropy"
    v_min: float = 0.3
    p_grad_floor: float = 0.05
    output_path: str = "trace.csv"
    env: EnvConfig = field(default_factory=EnvConfig)
    emotion: EmotionWeights = field(default_factory=EmotionWeights)
    reward: ChannelWeights = field(default_factory=ChannelWeights)
    goal: GoalParams = field(default_factory=GoalParams)
    mod: ModParams = field(default_factory=ModParams)
    safety: SafetyParams = field(default_factory=SafetyParams)

    def __post_init__(self):
        # the run seed drives every stream, including the environment's
        if self.env.seed != self.seed:
            self.env = dataclasses.replace(self.env, seed=self.seed)
        problems = validate(self)
        if problems:
            raise ConfigError(problems)

    def with_(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


_SECTIONS = {
    "env": EnvConfig,
    "emotion": EmotionWeights,
    "reward": ChannelWeights,
    "goal": GoalParams,
    "mod": ModParams,
    "safety": SafetyParams,
}
_RUN_KEYS = [f.name for f in dataclasses.fields(RunConfig) if f.name not in _SECTIONS]


def validate(cfg: RunConfig) -> list:
    p = []
    if cfg.steps < 0:
        p.append("run.steps must be >= 0")
    if cfg.warmup_t0 < 1:
        p.append("run.warmup_t0 must be >= 1")
    if not cfg.gamma > 0:
        p.append("run.gamma must be positive")
    if cfg.mi_window < 2:
        p.append("run.mi_window must be >= 2")
    if cfg.audit_every < 1:
        p.append("run.audit_every must be >= 1")
    if not 0.0 <= cfg.lambda_s < 1.0:
        p.append("run.lambda_s must lie in [0, 1)")
    if cfg.confidence_variant not in ("entropy", "margin"):
        p.append("run.confidence_variant must be 'entropy' or 'margin'")
    g = cfg.goal
    if not 0.0 < g.p_gen <= 1.0:
        p.append("goal.p_gen must lie in (0, 1]")
    if g.k_rollouts < 1:
        p.append("goal.k_rollouts must be >= 1")
    if g.probe_size < 2:
        p.append("goal.probe_size must be >= 2")
    for fam in g.utility:
        if not 0 <= int(fam) < cfg.env.n_families:
            p.append(f"goal.utility names family {fam} with no probe generator")
    if not any(u >= 0 for u in g.utility.values()):
        p.append("goal.utility must admit at least one family")
    m = cfg.mod
    if not (m.eta_m > 0 and m.l_m > 0 and m.beta_radius > 0):
        p.append("mod.eta_m, mod.l_m and mod.beta_radius must be positive")
    if m.beta_samples < 1:
        p.append("mod.beta_samples must be >= 1")
    s = cfg.safety
    if len(s.thresholds) != s.d_toll:
        p.append(f"safety.thresholds has {len(s.thresholds)} entries, d_toll is {s.d_toll}")
    if not s.eta_max > 0:
        p.append("safety.eta_max must be positive")
    if not 0.0 < s.toll_decay < 1.0:
        p.append("safety.toll_decay must lie in (0, 1)")
    if any(x < 0 for x in s.thresholds):
        p.append("safety.thresholds must be nonnegative")
    if not 0.0 <= cfg.reward.alpha < math.inf:
        p.append("reward.alpha must be finite and nonnegative")
    return p


def _build(cls, section: str, table: dict, problems: list):
    names = {f.name for f in dataclasses.fields(cls)}
    if cls is EnvConfig:
        names.discard("seed")
    kw = {}
    for k, val in table.items():
        if k not in names:
            problems.append(f"unknown key '{section}.{k}'")
            continue
        if isinstance(val, list):
            val = tuple(tuple(x) if isinstance(x, list) else x for x in val)
        if k == "utility":
            if not isinstance(val, dict):
                problems.append("goal.utility must be a table of family = utility")
                continue
            try:
                val = {int(f): float(u) for f, u in val.items()}
            except ValueError:
                problems.append("goal.utility keys must be family indices")
                continue
        kw[k] = val
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        problems.append(f"[{section}] {exc}")
        return cls()


def from_dict(d: dict, **overrides) -> RunConfig:
    problems = []
    run_table = dict(d.get("run", {}))
    for key in d:
        if key not in _SECTIONS and key != "run":
            problems.append(f"unknown section '[{key}]'")
    kw = {}
    for k, val in run_table.items():
        if k not in _RUN_KEYS:
            problems.append(f"unknown key 'run.{k}'")
        else:
            kw[k] = val
    seed = overrides.get("seed")
    if seed is None:
        seed = kw.get("seed", RunConfig.seed)
    for name, cls in _SECTIONS.items():
        table = dict(d.get(name, {}))
        if name == "env":
            obj = dataclasses.replace(_build(cls, name, table, problems), seed=int(seed))
        else:
            obj = _build(cls, name, table, problems)
        kw[name] = obj
    kw.update({k: v for k, v in overrides.items() if v is not None})
    if problems:
        raise ConfigError(problems)
    try:
        return RunConfig(**kw)
    except TypeError as exc:
        raise ConfigError([str(exc)]) from exc


def load(path, **overrides) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
    return from_dict(data, **overrides)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(cfg: RunConfig) -> str:
    """TOML text that :func:`load` reads back to an equal config."""
    lines = ["[run]"]
    for k in _RUN_KEYS:
        lines.append(f"{k} = {_fmt(getattr(cfg, k))}")
    for name in _SECTIONS:
        obj = getattr(cfg, name)
        lines.append("")
        lines.append(f"[{name}]")
        nested = []
        for f in dataclasses.fields(obj):
            if name == "env" and f.name == "seed":
                continue
            val = getattr(obj, f.name)
            if isinstance(val, dict):
                nested.append((f.name, val))
                continue
            lines.append(f"{f.name} = {_fmt(val)}")
        for key, table in nested:
            lines.append("")
            lines.append(f"[{name}.{key}]")
            for fam, u in sorted(table.items()):
                lines.append(f'"{fam}" = {_fmt(float(u))}')
    return "\n".join(lines) + "\n"


def write_default(path) -> Path:
    path = Path(path)
    path.write_text(render(RunConfig()))
    return path
