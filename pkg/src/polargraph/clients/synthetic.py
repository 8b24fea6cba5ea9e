"""Deterministic in-process backends used by tests, the CLI's offline mode and the harness.

Every output is a pure function of the seed and the call inputs: noise is drawn
from a hash of those inputs rather than from shared RNG state, so call order and
thread scheduling cannot change results.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import DimensionMismatch
from .base import EpisodeRef


def _digest(*parts) -> bytes:
    h = hashlib.blake2b(digest_size=32)
    for p in parts:
        b = str(p).encode("utf-8", "surrogatepass")
        h.update(struct.pack("<Q", len(b)))
        h.update(b)
    return h.digest()


def hash_normal(*parts) -> float:
    """Standard normal deviate keyed by ``parts`` (Box-Muller on two hashed uniforms)."""
    a, b = struct.unpack_from("<QQ", _digest(*parts))
    u1 = (a + 1) / 2.0**64  # (0, 1]
    u2 = b / 2.0**64
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def hash_rng(*parts) -> np.random.Generator:
    seed = np.frombuffer(_digest(*parts), dtype="<u4")
    return np.random.default_rng(np.random.SeedSequence(seed.tolist()))


def hash_to_sphere(dim: int, *parts) -> np.ndarray:
    v = hash_rng(*parts).standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass
class SyntheticWorld:
    """Ground truth for synthetic episodes.

    ``episodes`` maps episode id to present concepts; ``decoys`` holds the
    absent concepts the proposer also hypothesises for that episode.
    """

    episodes: dict[str, frozenset[str]]
    noise_sigma: float = 0.0
    seed: int = 0
    decoys: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


class SyntheticScorer:
    """clamp(1[c present] + N(0, sigma), 0, 1), keyed by (seed, episode, concept, template index)."""

    def __init__(self, world: SyntheticWorld):
        self.world = world

    def binary_score(self, episode: EpisodeRef, concept: str, prompt: str, template_index: int) -> float:
        truth = self.world.episodes.get(episode.episode_id, frozenset())
        base = 1.0 if concept in truth else 0.0
        if self.world.noise_sigma == 0:
            return base
        z = hash_normal("score", self.world.seed, episode.episode_id, concept, template_index)
        return min(max(base + self.world.noise_sigma * z, 0.0), 1.0)


class SyntheticProposer:
    """Replies with the episode's ground truth followed by its seeded decoys, comma-separated."""

    def __init__(self, world: SyntheticWorld):
        self.world = world

    def propose(self, episode: EpisodeRef) -> str:
        truth = sorted(self.world.episodes.get(episode.episode_id, ()))
        decoys = list(self.world.decoys.get(episode.episode_id, ()))
        return ", ".join(truth + decoys)


class SyntheticExtractor:
    """Answers from a registry of known chunk entities as a JSON array; unknown text yields ``[]``."""

    def __init__(self, registry: Mapping[str, Sequence[str]] | None = None):
        self.registry = dict(registry or {})

    def extract(self, text: str, style: str) -> str:
        ents = list(self.registry.get(text, ()))
        if style == "lines":
            return "\n".join(ents) or "EMPTY"
        if style == "tagged":
            return "<CONCEPTS>" + "\n".join(ents) + "</CONCEPTS>"
        return json.dumps(ents)


class SyntheticParser:
    """Looks the query up in a registry of constraint sets; unknown queries get empty lists."""

    def __init__(self, registry: Mapping[str, tuple[Sequence[str], Sequence[str]]] | None = None):
        self.registry = dict(registry or {})

    def parse_constraints(self, query: str, repair_hint: str | None = None) -> str:
        pos, neg = self.registry.get(query, ((), ()))
        return json.dumps({"positive": list(pos), "negative": list(neg)})


class SyntheticEncoder:
    """Seeded hash-to-sphere encoder with optional planted vectors.

    Planted entries let a benchmark fix the geometry of chosen inputs; every
    other input maps to a pseudo-random unit vector.
    """

    def __init__(self, dim: int = 64, seed: int = 0,
                 planted_text: Mapping[str, np.ndarray] | None = None,
                 planted_visual: Mapping[str, np.ndarray] | None = None):
        self.dim = dim
        self.seed = seed
        self.planted_text = {k: self._check(v) for k, v in (planted_text or {}).items()}
        self.planted_visual = {k: self._check(v) for k, v in (planted_visual or {}).items()}

    def _check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionMismatch(f"planted vector has shape {v.shape}, expected ({self.dim},)")
        return v / np.linalg.norm(v)

    def encode_text(self, text: str) -> np.ndarray:
        if text in self.planted_text:
            return self.planted_text[text].copy()
        return hash_to_sphere(self.dim, "text", self.seed, text)

    def encode_visual(self, ref: str) -> np.ndarray:
        if ref in self.planted_visual:
            return self.planted_visual[ref].copy()
        return hash_to_sphere(self.dim, "visual", self.seed, ref)


class EchoGenerator:
    """Returns the concatenated segments; records calls for inspection."""

    def __init__(self):
        self.calls: list[tuple[list[str], list[str]]] = []

    def generate(self, segments: Sequence[str], image_refs: Sequence[str] = ()) -> str:
        self.calls.append((list(segments), list(image_refs)))
        return "\n".join(segments)


class ScriptedGenerator:
    """Replies with a fixed string."""

    def __init__(self, reply: str):
        self.reply = reply

    def generate(self, segments: Sequence[str], image_refs: Sequence[str] = ()) -> str:
        return self.reply


class KeywordParser:
    """Offline query parser: known concepts named in the query become targets,
    or avoidance constraints when preceded by a negation cue."""

    NEGATIONS = ("no", "not", "without", "excluding", "except", "avoid")

    def __init__(self, vocabulary: Sequence[str]):
        # longest first so "red dog" wins over "dog"
        self.vocabulary = sorted(set(vocabulary), key=lambda c: (-len(c), c))

    def parse_constraints(self, query: str, repair_hint: str | None = None) -> str:
        text = " " + " ".join(query.lower().split()) + " "
        pos: list[str] = []
        neg: list[str] = []
        taken: list[tuple[int, int]] = []
        for concept in self.vocabulary:
            start = text.find(f" {concept} ")
            while start != -1:
                span = (start + 1, start + 1 + len(concept))
                if not any(a < span[1] and span[0] < b for a, b in taken):
                    taken.append(span)
                    preceding = text[:span[0]].split()[-3:]
                    (neg if any(w in self.NEGATIONS for w in preceding) else pos).append(concept)
                    break
                start = text.find(f" {concept} ", start + 1)
        return json.dumps({"positive": pos, "negative": neg})
