"""Meaning metrics: mutual-information estimates, MDL complexity, novelty bits,
meaning density (MD) and meaning-conversion efficiency (MCE).

Units are nats unless a name says bits; MDL code lengths are converted with
``log 2`` at the MD/MCE boundary.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .metacognition import DIST_FLOOR

EPS_DEN = 1.0
I_CAP = 10.0
LN2 = math.log(2.0)


@dataclass(frozen=True)
class MiEstimate:
    value: float
    n_samples: int
    mode: str = "discrete-plugin"
    stderr: float = 0.0
    degenerate: bool = False


@dataclass(frozen=True)
class ComplexityEstimate:
    bits: float
    quantizer_levels: int
    model_cost_bits: float
    data_cost_bits: float
    model: str = "empirical"


def mi_plugin(dists, labels, marginal) -> MiEstimate:
    """Variational lower bound ``mean[log Q(y|h) - log p(y)]``.

    ``dists`` holds one predictive distribution per row, ``labels`` the true
    classes, ``marginal`` the label distribution p(y). The result can be
    negative when Q is miscalibrated.
    """
    dists = np.atleast_2d(np.asarray(dists, dtype=float))
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ValueError("mi_plugin needs a non-empty batch")
    marginal = np.maximum(np.asarray(marginal, dtype=float), DIST_FLOOR)
    marginal = marginal / marginal.sum()
    q = np.maximum(dists[np.arange(labels.size), labels], DIST_FLOOR)
    terms = np.log(q) - np.log(marginal[labels])
    n = int(labels.size)
    se = float(terms.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MiEstimate(float(terms.mean()), n, "discrete-plugin", se)


def mi_differential(h, y, ridge: float = 1e-6, cap: float = I_CAP) -> MiEstimate:
    """Gaussian plug-in ``-1/2 log(1 - rho^2)`` with rho the canonical
    correlation between scalar ``y`` and vector ``h``.

    ``1 - rho^2`` is taken as the residual-variance ratio of a ridge regression
    of y on h, which stays well defined when y is an exact function of h.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n < 8 or h.shape[0] != n:
        raise ValueError("mi_differential needs at least 8 aligned (h, y) pairs")
    hc = h - h.mean(axis=0)
    yc = y - y.mean()
    var_y = float(yc @ yc) / n
    scale = np.sqrt((hc * hc).mean(axis=0))
    live = scale > 1e-12
    if var_y <= 1e-24 or not live.any():
        return MiEstimate(0.0, n, "continuous-gaussian", 0.0, degenerate=True)
    z = hc[:, live] / scale[live]
    cov = z.T @ z / n
    beta = np.linalg.solve(cov + ridge * np.eye(cov.shape[0]), z.T @ yc / n)
    resid = yc - z @ beta
    ratio = min(max(float(resid @ resid) / n / var_y, 0.0), 1.0)
    value = cap if ratio <= math.exp(-2.0 * cap) else min(-0.5 * math.log(ratio), cap)
    rho = math.sqrt(max(1.0 - ratio, 0.0))
    return MiEstimate(value, n, "continuous-gaussian", rho / math.sqrt(n))


def quantize(h, clip_range: float = 1.0, levels: int = 256) -> np.ndarray:
    h = np.asarray(h, dtype=float).ravel()
    x = (np.clip(h, -clip_range, clip_range) + clip_range) / (2 * clip_range)
    return np.minimum((x * levels).astype(np.int64), levels - 1)


def elias_gamma_bits(n: int) -> int:
    if n < 1:
        raise ValueError("Elias gamma codes positive integers only")
    return 2 * int(n).bit_length() - 1


def kraft_sum(lengths) -> float:
    return float(sum(2.0 ** (-float(l)) for l in lengths))


def shannon_lengths(counts) -> dict:
    """Per-symbol Shannon code lengths ceil(-log2 p) for an order-0 table."""
    total = sum(counts.values())
    return {s: math.ceil(-math.log2(c / total) - 1e-12) for s, c in counts.items()}


def symbol_code_length(symbols, alphabet: int = 256) -> ComplexityEstimate:
    """Two-part code length of a symbol string, choosing the cheaper of a
    uniform model and an order-0 empirical frequency model."""
    symbols = [int(s) for s in symbols]
    n = len(symbols)
    if n == 0:
        raise ValueError("cannot code an empty string")
    sym_bits = math.ceil(math.log2(alphabet))
    header = elias_gamma_bits(n) + 1  # length + model index

    uniform = ComplexityEstimate(header + sym_bits * n, alphabet, header, sym_bits * n, "uniform")

    counts = Counter(symbols)
    table = sym_bits + sum(sym_bits + elias_gamma_bits(c) for c in counts.values())
    ideal = -sum(c * math.log2(c / n) for c in counts.values())
    data = float(math.ceil(ideal - 1e-9)) if ideal > 0 else 0.0
    empirical = ComplexityEstimate(header + table + data, alphabet, header + table, data, "empirical")
    return empirical if empirical.bits < uniform.bits else uniform


def mdl_complexity(h, clip_range: float = 1.0, levels: int = 256) -> ComplexityEstimate:
    """MDL surrogate for the complexity of a real vector: 8-bit quantisation
    followed by the two-part code of :func:`symbol_code_length`."""
    h = np.asarray(h, dtype=float).ravel()
    if h.size == 0:
        raise ValueError("cannot measure complexity of an empty vector")
    if not np.all(np.isfinite(h)):
        raise ValueError("hidden state contains non-finite entries")
    return symbol_code_length(quantize(h, clip_range, levels), levels)


@dataclass
class NoveltyCounter:
    order: int = 4
    dictionary: set = field(default_factory=set)
    delta_s: float = 0.0
    s_max: float = 0.0

    def update(self, obs: bytes) -> float:
        k = self.order
        grams = {bytes(obs[i : i + k]) for i in range(len(obs) - k + 1)}
        fresh = grams - self.dictionary
        self.dictionary |= grams
        self.delta_s = 8.0 * len(fresh)
        self.s_max = max(self.s_max, self.delta_s)
        return self.delta_s


def novelty_bits(obs: bytes, counter: NoveltyCounter):
    """Bits of previously unseen 4-grams in ``obs``; updates ``counter``."""
    return counter.update(obs), counter


def meaning_density(i_est, k_est, eps_den: float = EPS_DEN) -> float:
    i_val = i_est.value if isinstance(i_est, MiEstimate) else float(i_est)
    k_bits = k_est.bits if isinstance(k_est, ComplexityEstimate) else float(k_est)
    return max(i_val, 0.0) / (k_bits * LN2 + eps_den)


def mce(i_next, i_prev, delta_s: float, eps_den: float = EPS_DEN) -> float:
    a = i_next.value if isinstance(i_next, MiEstimate) else float(i_next)
    b = i_prev.value if isinstance(i_prev, MiEstimate) else float(i_prev)
    return (a - b) / (delta_s * LN2 + eps_den)


def _plugin_entropy(*cols) -> float:
    keys = np.stack(cols, axis=1)
    _, counts = np.unique(keys, axis=0, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def plugin_mi(a, b) -> float:
    return _plugin_entropy(a) + _plugin_entropy(b) - _plugin_entropy(a, b)


def plugin_cmi(a, b, given) -> float:
    return (
        _plugin_entropy(a, given)
        + _plugin_entropy(b, given)
        - _plugin_entropy(a, b, given)
        - _plugin_entropy(given)
    )


def ib_residual(x, h, y, max_cells: int = 16**3) -> float:
    """|I(X;Y) - I(X;H) + I(X;H|Y)| over the empirical joint of discrete draws.

    Zero exactly when the empirical joint makes X -> H -> Y Markov; otherwise it
    equals the empirical I(X;Y|H).
    """
    x, h, y = (np.asarray(a, dtype=np.int64).ravel() for a in (x, h, y))
    if not (x.size == h.size == y.size) or x.size == 0:
        raise ValueError("x, h, y must be non-empty and aligned")
    cells = len(np.unique(x)) * len(np.unique(h)) * len(np.unique(y))
    if cells > max_cells:
        raise ValueError(f"joint alphabet has {cells} cells, exhaustive limit is {max_cells}")
    return abs(plugin_mi(x, y) - plugin_mi(x, h) + plugin_cmi(x, h, y))
