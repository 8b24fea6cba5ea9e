"""Adaptive split of a confidence spectrum into positive / negative / uncertain sets.

The threshold maximizes the between-class variance
``w_val * w_rej * (mu_val - mu_rej) ** 2`` over the spectrum after two virtual
anchor scores (0 and 1) are appended. A margin ``delta = kappa * sigma_w``
around the threshold holds the concepts the model was equivocal about.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import OutOfRange
from .scoring import ConfidenceSpectrum

DEFAULT_KAPPA = 0.5
ANCHORS = (0.0, 1.0)

# objectives within this (relative) distance of the best count as tied, so
# float noise in the cumulative sums cannot flip the smallest-tau rule
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class ThresholdResult:
    tau_star: float
    omega_val: float
    omega_rej: float
    mu_val: float
    mu_rej: float
    sigma_w: float
    objective: float


@dataclass(frozen=True)
class Partition:
    positive: frozenset[str]
    negative: frozenset[str]
    uncertain: frozenset[str]
    tau_star: float
    delta: float
    kappa: float
    scores: dict[str, float] | None = None

    def __post_init__(self):
        if self.positive & self.negative or self.positive & self.uncertain or self.negative & self.uncertain:
            raise ValueError("partition sets must be pairwise disjoint")

    @classmethod
    def from_sets(cls, positive=(), negative=(), uncertain=()) -> "Partition":
        """Partition built by hand (tests, imports); threshold fields are placeholders."""
        return cls(frozenset(positive), frozenset(negative), frozenset(uncertain), 0.5, 0.0, 0.0)

    @property
    def concepts(self) -> frozenset[str]:
        return self.positive | self.negative | self.uncertain


def inject_anchors(scores: Sequence[float]) -> list[float]:
    out = []
    for s in scores:
        s = float(s)
        if not 0.0 <= s <= 1.0:
            raise OutOfRange(f"score {s} outside [0, 1]")
        out.append(s)
    out.extend(ANCHORS)
    return out


def _class_stats(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return 0.0, 0.0
    return float(values.mean()), float(values.std())


def otsu_threshold(anchored_scores: Sequence[float]) -> ThresholdResult:
    """Exact between-class-variance maximizer over midpoints of distinct sorted values.

    Points at or below the threshold belong to the rejection class. Among
    tied candidates the smallest threshold wins.
    """
    x = np.sort(np.asarray(anchored_scores, dtype=np.float64))
    n = x.size
    if n < 2:
        raise ValueError("otsu_threshold needs at least two scores (inject anchors first)")

    distinct, counts = np.unique(x, return_counts=True)
    if distinct.size == 1:
        mu, sd = _class_stats(x)
        return ThresholdResult(float(distinct[0]), 0.0, 1.0, mu, mu, sd, 0.0)

    # split after distinct value i: rejection = distinct[: i + 1]
    cum_n = np.cumsum(counts)[:-1].astype(np.float64)
    cum_s = np.cumsum(distinct * counts)[:-1]
    total_s = float(np.sum(x))
    w_rej = cum_n / n
    w_val = 1.0 - w_rej
    mu_rej = cum_s / cum_n
    mu_val = (total_s - cum_s) / (n - cum_n)
    objective = w_val * w_rej * (mu_val - mu_rej) ** 2

    best = float(objective.max())
    i = int(np.flatnonzero(objective >= best - _TIE_RTOL * max(best, 1.0))[0])
    lo, hi = float(distinct[i]), float(distinct[i + 1])
    tau = (lo + hi) / 2.0
    if tau >= hi:  # adjacent doubles: keep s <= tau meaning "rejected"
        tau = lo

    # statistics recomputed directly from the split so they do not inherit
    # cumulative-sum rounding
    n_rej = int(cum_n[i])
    rej, val = x[:n_rej], x[n_rej:]
    m_rej, s_rej = _class_stats(rej)
    m_val, s_val = _class_stats(val)
    o_rej = n_rej / n
    o_val = 1.0 - o_rej
    return ThresholdResult(
        tau_star=tau,
        omega_val=o_val,
        omega_rej=o_rej,
        mu_val=m_val,
        mu_rej=m_rej,
        sigma_w=o_val * s_val + o_rej * s_rej,
        objective=float(objective[i]),
    )


def classify(score: float, tau: float, delta: float) -> str:
    """Three-way rule; ``|score - tau| == delta`` lands in ``uncertain``."""
    if score > tau + delta:
        return "positive"
    if score < tau - delta:
        return "negative"
    return "uncertain"


def partition_spectrum(spectrum: ConfidenceSpectrum | dict[str, float], kappa: float = DEFAULT_KAPPA) -> Partition:
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    scores = dict(spectrum.scores if isinstance(spectrum, ConfidenceSpectrum) else spectrum)
    result = otsu_threshold(inject_anchors(list(scores.values())))
    delta = kappa * result.sigma_w
    buckets: dict[str, set[str]] = {"positive": set(), "negative": set(), "uncertain": set()}
    for concept, s in scores.items():
        buckets[classify(s, result.tau_star, delta)].add(concept)
    return Partition(
        positive=frozenset(buckets["positive"]),
        negative=frozenset(buckets["negative"]),
        uncertain=frozenset(buckets["uncertain"]),
        tau_star=result.tau_star,
        delta=delta,
        kappa=kappa,
        scores=scores,
    )
