"""Rényi divergence between quantized adjacent samples.

Divergences are evaluated in log space: each bin contributes the log-term
``alpha * ln p + (1 - alpha) * ln q``, or exactly ``ln p`` when ``p == q``.
The reduction (max-shifted ``fsum`` of exponentials) is order independent,
so any two evaluations over the same multiset of terms agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .quantization import QuantizationScheme, channel_indices, midpoints

DEFAULT_ALPHAS = (1.5, 2.0, 4.0, 8.0, 32.0, 1024.0)
INF_PROXY_ALPHA = 1024.0


@dataclass(frozen=True)
class EmpiricalDistribution:
    frequencies: np.ndarray
    support: np.ndarray
    size: int

    def __post_init__(self):
        if self.frequencies.shape != self.support.shape:
            raise ValueError("frequencies and support differ in shape")
        if np.any(self.frequencies < 0) or abs(math.fsum(self.frequencies) - 1.0) > 1e-12:
            raise ValueError("frequencies must be a probability vector")

    @property
    def bins(self) -> int:
        return self.frequencies.size

    @property
    def p_max(self) -> float:
        return float(self.frequencies.max())


def quantized_distribution(sample: Sequence[float], scheme: QuantizationScheme, level: int) -> EmpiricalDistribution:
    """Histogram of ``sample`` over the ``2**level`` channel midpoints."""
    x = np.asarray(sample, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty sample")
    idx = channel_indices(x, scheme, level)
    counts = np.bincount(idx, minlength=1 << level)
    return EmpiricalDistribution(counts / x.size, midpoints(scheme, level), int(x.size))


def _log_terms(p: np.ndarray, q: np.ndarray, alpha: float) -> list[float] | None:
    """Per-bin log-terms, or ``None`` when the sum is infinite."""
    terms = []
    for pi, qi in zip(p.tolist(), q.tolist()):
        if pi == 0.0:
            continue  # 0/0 = 1 convention: the term p^a q^(1-a) vanishes
        if qi == 0.0:
            if alpha > 1:
                return None
            continue
        if pi == qi:
            terms.append(math.log(pi))
        else:
            terms.append(alpha * math.log(pi) + (1.0 - alpha) * math.log(qi))
    return terms


def _divergence_from_terms(terms: list[float] | None, alpha: float) -> float:
    if terms is None:
        return math.inf
    if not terms:
        return math.inf if alpha > 1 else -math.inf
    top = max(terms)
    return (top + math.log(math.fsum(math.exp(t - top) for t in terms))) / (alpha - 1.0)


def _check_pair(P: EmpiricalDistribution, Q: EmpiricalDistribution, alpha: float) -> None:
    if not alpha > 0 or alpha == 1:
        raise ValueError("alpha must be positive and different from 1")
    if P.bins != Q.bins or not np.array_equal(P.support, Q.support):
        raise ValueError("distributions are not on the same support")


def renyi_divergence(P: EmpiricalDistribution, Q: EmpiricalDistribution, alpha: float) -> float:
    """D_alpha(P || Q) = ln(sum_h p_h^alpha q_h^(1 - alpha)) / (alpha - 1)."""
    _check_pair(P, Q, alpha)
    return _divergence_from_terms(_log_terms(P.frequencies, Q.frequencies, alpha), alpha)


def adjacent_divergence(
    P: EmpiricalDistribution, Q: EmpiricalDistribution, r: int, s: int, alpha: float
) -> float:
    """D_alpha(P || Q) for adjacent samples whose bins agree outside ``{r, s}``.

    Bins other than ``r`` and ``s`` have ``p_h == q_h`` and contribute ``p_h``
    directly; only the two changed bins need the general term.
    """
    _check_pair(P, Q, alpha)
    p, q = P.frequencies, Q.frequencies
    changed = sorted({r, s})
    mask = np.ones(p.size, dtype=bool)
    mask[changed] = False
    if not np.array_equal(p[mask], q[mask]):
        raise ValueError("distributions differ outside the replaced bins")
    terms = [math.log(v) for v in p[mask].tolist() if v > 0]
    tail = _log_terms(p[changed], q[changed], alpha)
    return _divergence_from_terms(None if tail is None else terms + tail, alpha)


def max_log_ratio(P: EmpiricalDistribution, Q: EmpiricalDistribution) -> float:
    """D_inf(P || Q) = max_h ln(p_h / q_h) over bins where p_h > 0."""
    best = -math.inf
    for pi, qi in zip(P.frequencies.tolist(), Q.frequencies.tolist()):
        if pi > 0:
            best = max(best, math.inf if qi == 0 else math.log(pi / qi))
    return best


def divergence_cap(alpha: float, n: int, p_max: float) -> float:
    """ln(n) / (alpha - 1) + (2 alpha - 1) / (alpha - 1) * ln(p_max)."""
    if not alpha > 1:
        raise ValueError("the cap is defined for alpha > 1")
    return math.log(n) / (alpha - 1.0) + (2.0 * alpha - 1.0) / (alpha - 1.0) * math.log(p_max)


def epsilon_from_pmax(p_max: float) -> float:
    """2 ln(p_max), taken as written (non-positive whenever p_max <= 1)."""
    return 2.0 * math.log(p_max)


def adjacent_divergence_report(
    sample: Sequence[float],
    index: int,
    replacement: float,
    scheme: QuantizationScheme,
    alphas: Iterable[float] = DEFAULT_ALPHAS,
    level: int | None = None,
) -> dict:
    """Divergences between a sample and its neighbour with one value replaced.

    Reports each D_alpha next to the closed-form cap, plus the max-ratio
    D_inf and the 2 ln(p_max) summary; the cap is not enforced.
    """
    sample = np.asarray(sample, dtype=np.float64)
    if not 0 <= index < sample.size:
        raise IndexError(f"replacement index {index} outside sample of size {sample.size}")
    level = scheme.max_level if level is None else level
    neighbour = sample.copy()
    neighbour[index] = replacement
    P = quantized_distribution(sample, scheme, level)
    Q = quantized_distribution(neighbour, scheme, level)
    r = int(channel_indices([sample[index]], scheme, level)[0])
    s = int(channel_indices([replacement], scheme, level)[0])
    eps = epsilon_from_pmax(P.p_max)
    records = [
        {
            "alpha": alpha,
            "divergence": renyi_divergence(P, Q, alpha),
            "divergence_restricted": adjacent_divergence(P, Q, r, s, alpha),
            "cap": divergence_cap(alpha, sample.size, P.p_max) if alpha > 1 else None,
            "p_max": P.p_max,
            "n": int(sample.size),
            "epsilon_eq12": eps,
        }
        for alpha in alphas
    ]
    return {
        "level": level,
        "bins": P.bins,
        "replaced_bin": r,
        "replacement_bin": s,
        "d_inf": max_log_ratio(P, Q),
        "epsilon_abs": abs(eps),
        "records": records,
    }
