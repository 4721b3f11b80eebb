"""Temperature-scaling calibration: fit the scalar T that minimizes the
negative log-likelihood of validation predictions under the tempered softmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

T_MIN = 0.05
T_MAX = 20.0
T_TOL = 1e-4
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class CalibrationFit:
    temperature: float
    nll_before: float  # at T = 1
    nll_after: float   # at the fitted T
    iterations: int


def nll(logits, labels, temperature: float) -> float:
    """Mean negative log-likelihood of the labels under softmax(logits / T)."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / float(temperature)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError(f"logits must be a non-empty [N, classes] array, got {z.shape}")
    if labels.shape != (z.shape[0],):
        raise ValueError(f"labels shape {labels.shape} != ({z.shape[0]},)")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise ValueError("labels out of range")
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(z.shape[0]), labels]
    return float(np.mean(log_norm - picked))


def fit_temperature(logits, labels, t_lo: float = T_MIN, t_hi: float = T_MAX) -> CalibrationFit:
    """Golden-section search for the NLL-minimizing temperature in [t_lo, t_hi].

    The objective is unimodal in practice; if the search ever lands worse
    than T=1, the fit falls back to T=1 so calibration never hurts the NLL.
    Deterministic given inputs.
    """
    logits = np.asarray(logits, dtype=np.float64)
    before = nll(logits, labels, 1.0)

    a, b = t_lo, t_hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = nll(logits, labels, c)
    fd = nll(logits, labels, d)
    iterations = 2
    while b - a > T_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = nll(logits, labels, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = nll(logits, labels, d)
        iterations += 1
    t_star = (a + b) / 2.0
    after = nll(logits, labels, t_star)
    if before <= after:
        t_star, after = 1.0, before
    return CalibrationFit(float(t_star), before, after, iterations)


def single_T_policy(fits, baseline_id: str = "baseline") -> float:
    """One shared temperature for every configuration: the baseline's fit.

    ``fits`` maps configuration id to CalibrationFit; a single-entry mapping
    returns its own temperature regardless of id.
    """
    if not fits:
        raise ValueError("no calibration fits given")
    if len(fits) == 1:
        return float(next(iter(fits.values())).temperature)
    if baseline_id not in fits:
        raise ValueError(f"no fit for baseline configuration '{baseline_id}'")
    return float(fits[baseline_id].temperature)
