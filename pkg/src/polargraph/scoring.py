"""Ensemble yes/no verification: candidate concepts -> calibrated confidence spectrum."""

from __future__ import annotations

import logging
import math
import time
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .clients.base import BinaryScorer, EpisodeRef
from .errors import BackendError, EmptyConcept, ScorerUnavailable

logger = logging.getLogger(__name__)

PLACEHOLDER = "{c}"
DEFAULT_RETRIES = 2
DEFAULT_MAX_PARALLEL = 4
DEFAULT_ENSEMBLE_SIZE = 8

_DROP_CATEGORIES = {"Cc", "Cf", "Cs", "Co", "Cn"}


def normalize_concept(raw: str) -> str:
    """Lowercase, trim and collapse internal whitespace.

    Control and format characters are dropped as well, so keys coming from
    arbitrary model output are always printable.
    """
    words = []
    for word in str(raw).split():
        cleaned = "".join(ch for ch in word if unicodedata.category(ch) not in _DROP_CATEGORIES)
        if cleaned:
            words.append(cleaned.lower())
    out = " ".join(words)
    if not out:
        raise EmptyConcept(f"concept {raw!r} is empty after normalization")
    return out


def normalize_many(raws: Iterable[str]) -> list[str]:
    """Normalize and de-duplicate, keeping first-seen order; empty items are skipped."""
    seen: dict[str, None] = {}
    for raw in raws:
        try:
            seen.setdefault(normalize_concept(raw), None)
        except EmptyConcept:
            continue
    return list(seen)


@dataclass(frozen=True)
class TemplateEnsemble:
    templates: tuple[str, ...]

    def __post_init__(self):
        if not self.templates:
            raise ValueError("an ensemble needs at least one template")
        for t in self.templates:
            if t.count(PLACEHOLDER) != 1:
                raise ValueError(f"template must contain exactly one {PLACEHOLDER}: {t!r}")
        if len(set(self.templates)) != len(self.templates):
            raise ValueError("templates must be distinct")

    def __len__(self) -> int:
        return len(self.templates)

    def render(self, concept: str) -> list[str]:
        return [t.replace(PLACEHOLDER, concept) for t in self.templates]

    @classmethod
    def from_file(cls, path: str | Path) -> "TemplateEnsemble":
        text = Path(path).read_text(encoding="utf-8")
        return cls.from_lines(text.splitlines())

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "TemplateEnsemble":
        return cls(tuple(line.strip() for line in lines if line.strip()))

    @classmethod
    def default(cls, size: int = DEFAULT_ENSEMBLE_SIZE) -> "TemplateEnsemble":
        text = resources.files("polargraph").joinpath("data/templates.txt").read_text(encoding="utf-8")
        ens = cls.from_lines(text.splitlines())
        if not 1 <= size <= len(ens):
            raise ValueError(f"default ensemble has {len(ens)} templates, asked for {size}")
        return cls(ens.templates[:size])


@dataclass(frozen=True)
class ConfidenceSpectrum:
    episode_id: str
    scores: Mapping[str, float]
    template_count: int
    per_template: Mapping[str, tuple[float, ...]] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for c, s in self.scores.items():
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"score for {c!r} outside [0, 1]: {s}")

    def values(self) -> list[float]:
        return list(self.scores.values())


def _call_with_retry(fn, retries: int, backoff: float):
    for attempt in range(retries + 1):
        try:
            return fn()
        except BackendError as exc:
            if attempt == retries:
                raise ScorerUnavailable(str(exc)) from exc
            logger.debug("scorer call failed (attempt %d): %s", attempt + 1, exc)
            if backoff > 0:
                time.sleep(backoff * (2**attempt))


def score_concepts(
    episode: EpisodeRef,
    candidates: Sequence[str],
    ensemble: TemplateEnsemble,
    scorer: BinaryScorer,
    *,
    max_parallel: int = DEFAULT_MAX_PARALLEL,
    retries: int = DEFAULT_RETRIES,
    backoff: float = 0.1,
) -> ConfidenceSpectrum:
    """Average the scorer's yes-probability over every template for each candidate.

    Any call that still fails after ``retries`` retries aborts the whole
    spectrum with :class:`ScorerUnavailable`.
    """
    concepts = normalize_many(candidates)
    if not concepts:
        raise ValueError("score_concepts needs at least one candidate")

    jobs = [
        (c, i, prompt)
        for c in concepts
        for i, prompt in enumerate(ensemble.render(c))
    ]

    def run(job):
        c, i, prompt = job
        p = _call_with_retry(lambda: scorer.binary_score(episode, c, prompt, i), retries, backoff)
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise ScorerUnavailable(f"scorer returned {p} for {c!r}, expected a probability")
        return p

    if max_parallel <= 1:
        probs = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            probs = list(pool.map(run, jobs))

    k = len(ensemble)
    per_template: dict[str, tuple[float, ...]] = {}
    scores: dict[str, float] = {}
    for n, c in enumerate(concepts):
        row = tuple(probs[n * k:(n + 1) * k])
        per_template[c] = row
        # fsum keeps the mean exactly order-independent
        mean = math.fsum(row) / k
        scores[c] = min(max(mean, min(row)), max(row))
    return ConfidenceSpectrum(episode.episode_id, scores, k, per_template)
