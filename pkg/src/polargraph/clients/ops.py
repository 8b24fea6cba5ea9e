"""Client-facing operations and the tolerant reply parsers behind them."""

from __future__ import annotations

import json
import logging
import re
from typing import Sequence

import numpy as np

from ..errors import BackendError, DimensionMismatch, EmptyConcept
from ..scoring import normalize_concept, normalize_many
from .base import BinaryScorer, ConceptProposer, Encoder, EntityExtractor, EpisodeRef, Generator

logger = logging.getLogger(__name__)

MAX_PROPOSED = 40
EXTRACTION_STYLES = ("json", "lines", "tagged")

_TAG_RE = re.compile(r"<CONCEPTS>(.*?)</CONCEPTS>", re.DOTALL | re.IGNORECASE)
_LINE_FORBIDDEN = set("<>[]{}\"")


def parse_concept_list(reply: str) -> list[str]:
    return normalize_many(reply.split(","))[:MAX_PROPOSED]


def propose_concepts(episode: EpisodeRef, proposer: ConceptProposer) -> list[str]:
    return parse_concept_list(proposer.propose(episode))


def _keys(items) -> set[str]:
    out = set()
    for item in items:
        if not isinstance(item, str):
            continue
        try:
            out.add(normalize_concept(item))
        except EmptyConcept:
            continue
    return out


def parse_json_array(reply: str) -> set[str] | None:
    try:
        obj = json.loads(reply.strip())
    except (json.JSONDecodeError, ValueError, RecursionError):
        return None
    if not isinstance(obj, list):
        return None
    return _keys(obj)


def parse_lines(reply: str) -> set[str] | None:
    text = reply.strip()
    if text == "EMPTY":
        return set()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or any(_LINE_FORBIDDEN & set(ln) for ln in lines):
        return None
    return _keys(lines)


def parse_tagged(reply: str) -> set[str] | None:
    m = _TAG_RE.search(reply)
    if m is None:
        return None
    return _keys(ln.strip() for ln in m.group(1).splitlines())


_PARSERS = {"json": parse_json_array, "lines": parse_lines, "tagged": parse_tagged}


def parse_entities(reply: str) -> set[str] | None:
    """Try the JSON, line and tag formats on one reply, in that order."""
    for style in EXTRACTION_STYLES:
        got = _PARSERS[style](reply)
        if got is not None:
            return got
    return None


def extract_entities(text: str, extractor: EntityExtractor) -> set[str]:
    """Entity keys for a text chunk; never raises.

    Each prompt style is asked in turn; every reply is run through all three
    parsers before moving to the next style. All failures yield the empty set.
    """
    for style in EXTRACTION_STYLES:
        try:
            reply = extractor.extract(text, style)
        except BackendError as exc:
            logger.warning("entity extraction (%s) failed: %s", style, exc)
            continue
        if not isinstance(reply, str):
            continue
        got = parse_entities(reply)
        if got is not None:
            return got
    return set()


def binary_score(episode: EpisodeRef, concept: str, template: str, scorer: BinaryScorer,
                 template_index: int = 0) -> float:
    return float(scorer.binary_score(episode, concept, template.replace("{c}", concept), template_index))


def _checked(vec, encoder: Encoder) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64).reshape(-1)
    if v.shape[0] != encoder.dim:
        raise DimensionMismatch(f"encoder returned dimension {v.shape[0]}, configured {encoder.dim}")
    return v


def encode_text(text: str, encoder: Encoder) -> np.ndarray:
    return _checked(encoder.encode_text(text), encoder)


def encode_visual(ref: str, encoder: Encoder) -> np.ndarray:
    return _checked(encoder.encode_visual(ref), encoder)


def generate(context_segments: Sequence[str], image_refs: Sequence[str], generator: Generator) -> str:
    if not context_segments:
        raise ValueError("context must hold at least one segment")
    return generator.generate(list(context_segments), list(image_refs))
