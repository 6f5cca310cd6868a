"""Synthetic series generators and the regime-mixing schemes.

Two independent component processes (a stationary ARMA recursion and an
eight-regime piecewise-constant process) are blended with time-modulo
dependent weights to form three dataset families of increasing regime count.
The modulo features handed to the ensembler are what make the mixing weights
learnable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TimeSeriesFrame
from .errors import LengthMismatch

ARMA_BURN_IN = 100
PIECEWISE_BURN_IN = 50
LAG_MARGIN = 7

# regime levels keyed on (y_{t-7} > 50, y_{t-1} > 50, 7-step mean > 50);
# ties at exactly 50 take the False branch
PIECEWISE_LEVELS = {
    (True, True, True): 30.0,
    (True, True, False): 35.0,
    (True, False, True): 40.0,
    (True, False, False): 45.0,
    (False, True, True): 56.0,
    (False, True, False): 61.0,
    (False, False, True): 66.0,
    (False, False, False): 71.0,
}

# first-component weight per (t mod k) residue; the second weight is 1 - alpha
MIX_TABLES = {
    "a": {0: 0.333, 1: 0.666},
    "b": {0: 0.200, 1: 0.400, 2: 0.600, 3: 0.800},
    "c": {
        0: 0.059, 1: 0.118, 2: 0.176, 3: 0.235,
        4: 0.294, 5: 0.353, 6: 0.412, 7: 0.471,
        8: 0.529, 9: 0.588, 10: 0.647, 11: 0.706,
        12: 0.765, 13: 0.824, 14: 0.882, 15: 0.941,
    },
}
MIX_MODULUS = {"a": 2, "b": 4, "c": 16}


@dataclass(frozen=True)
class SyntheticSpec:
    length: int = 730
    mix: str = "a"
    seed: int = 0
    noise_sigma: float = 1.0

    def __post_init__(self):
        if self.length <= 50:
            raise ValueError(f"length {self.length} too short (burn-in viability)")
        if self.mix not in MIX_TABLES:
            raise ValueError(f"mix must be one of a/b/c, got {self.mix!r}")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")


def gen_arma(length: int, seed: int, noise_sigma: float = 1.0) -> np.ndarray:
    """Stationary ARMA-style recursion with unit-variance Gaussian innovations.

    y_t = 0.2 y_{t-1} - 0.1 y_{t-2} + 0.3 e_{t-1} - 0.1 e_{t-2} + v_t with the
    error term e_t = y_t - 0.2 y_{t-1} - 0.1 y_{t-2}. A 100-sample burn-in from
    a zero initial state is discarded.
    """
    if length < 3:
        raise ValueError("length must be >= 3")
    rng = np.random.default_rng(seed)
    n = length + ARMA_BURN_IN
    y = np.zeros(n)
    e = np.zeros(n)
    v = rng.standard_normal(n) * noise_sigma
    for t in range(2, n):
        y[t] = 0.2 * y[t - 1] - 0.1 * y[t - 2] + 0.3 * e[t - 1] - 0.1 * e[t - 2] + v[t]
        e[t] = y[t] - 0.2 * y[t - 1] - 0.1 * y[t - 2]
    return y[ARMA_BURN_IN:]


def piecewise_level(prev7: float, prev1: float, mean7: float) -> float:
    """Regime level for one step given the three switching statistics."""
    return PIECEWISE_LEVELS[(prev7 > 50.0, prev1 > 50.0, mean7 > 50.0)]


def gen_piecewise(length: int, seed: int, noise_sigma: float = 1.0) -> np.ndarray:
    """Eight-regime piecewise-constant process with unit Gaussian noise.

    The first 7 samples are seeded uniformly in [45, 55] so the early regime
    conditions are non-degenerate; a further 50-sample burn-in is discarded.
    """
    if length < 8:
        raise ValueError("length must be >= 8")
    rng = np.random.default_rng(seed)
    n = length + PIECEWISE_BURN_IN + 7
    y = np.zeros(n)
    y[:7] = rng.uniform(45.0, 55.0, size=7)
    noise = rng.standard_normal(n) * noise_sigma
    for t in range(7, n):
        window = y[t - 7 : t]
        y[t] = piecewise_level(y[t - 7], y[t - 1], window.mean()) + noise[t]
    return y[7 + PIECEWISE_BURN_IN :]


def mix_weights(mix_kind: str, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(alpha_t, beta_t) per 1-based time index; alpha + beta = 1 by table."""
    table = MIX_TABLES[mix_kind]
    mod = MIX_MODULUS[mix_kind]
    residues = np.mod(t, mod)
    alpha = np.asarray([table[int(r)] for r in residues], dtype=float)
    return alpha, 1.0 - alpha


def mix(y1, y2, mix_kind: str) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    """Blend the two components with modulo-keyed weights.

    Returns (series, side_info, column_names) where side info holds the
    mod2/mod4/mod16 integer features for 1-based t, emitted for every mix kind
    so the ensembler feature set is identical across runs.
    """
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y1.shape != y2.shape:
        raise LengthMismatch(f"components differ: {y1.shape} vs {y2.shape}")
    t = np.arange(1, y1.size + 1)
    alpha, beta = mix_weights(mix_kind, t)
    series = alpha * y1 + beta * y2
    side = np.column_stack([t % 2, t % 4, t % 16]).astype(float)
    return series, side, ("mod2", "mod4", "mod16")


def generate_frame(spec: SyntheticSpec) -> TimeSeriesFrame:
    """Full synthetic dataset: target plus modulo, lag and component columns.

    Columns: mod2, mod4, mod16, lag1, lag7 (lags of the mixed series) and the
    raw components y1, y2 (used as oracle base predictions when reproducing
    the synthetic experiments; never fed to the ensembler as features).
    """
    inner = spec.length + LAG_MARGIN
    rng = np.random.default_rng(spec.seed)
    seed1, seed2 = rng.integers(0, 2**31 - 1, size=2)
    y1 = gen_arma(inner, int(seed1), spec.noise_sigma)
    y2 = gen_piecewise(inner, int(seed2), spec.noise_sigma)
    series, mods, mod_names = mix(y1, y2, spec.mix)

    keep = slice(LAG_MARGIN, inner)
    lag1 = series[LAG_MARGIN - 1 : inner - 1]
    lag7 = series[0 : inner - LAG_MARGIN]
    side = np.column_stack([mods[keep], lag1, lag7, y1[keep], y2[keep]])
    names = (*mod_names, "lag1", "lag7", "y1", "y2")
    return TimeSeriesFrame(series[keep], side, names)

# column subset written by the synth CLI command (components stay internal)
CSV_COLUMNS = ("mod2", "mod4", "mod16", "lag1", "lag7")
