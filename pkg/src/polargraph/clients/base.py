"""Backend-facing protocols and the shared client configuration."""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class EpisodeRef:
    """Handle to one visual episode: an id plus the image location the backend loads."""

    episode_id: str
    image_uri: str | None = None


@dataclass(frozen=True)
class ClientConfig:
    endpoint_url: str = "http://localhost:8000/v1"
    model_name: str = "default"
    timeout: float = 30.0
    max_retries: int = 2
    max_parallel: int = 4
    api_key_env_var: str = "POLARGRAPH_API_KEY"
    embedding_model: str | None = None
    retry_backoff: float = 0.5

    def __post_init__(self):
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.max_parallel < 1:
            raise ConfigError("max_parallel must be >= 1")

    def api_key(self) -> str | None:
        # read at call time so the credential never lives on the config object
        return os.environ.get(self.api_key_env_var)


@runtime_checkable
class BinaryScorer(Protocol):
    def binary_score(self, episode: EpisodeRef, concept: str, prompt: str, template_index: int) -> float:
        """Probability in [0, 1] that the answer to ``prompt`` is "Yes"."""


@runtime_checkable
class ConceptProposer(Protocol):
    def propose(self, episode: EpisodeRef) -> str:
        """Raw comma-separated concept reply."""


@runtime_checkable
class EntityExtractor(Protocol):
    def extract(self, text: str, style: str) -> str:
        """Raw reply for one of the prompt styles ``json``, ``lines`` or ``tagged``."""


@runtime_checkable
class ConceptParser(Protocol):
    def parse_constraints(self, query: str, repair_hint: str | None = None) -> str:
        """Raw reply expected to hold a JSON object with ``positive``/``negative`` lists."""


@runtime_checkable
class Encoder(Protocol):
    dim: int

    def encode_text(self, text: str) -> np.ndarray: ...

    def encode_visual(self, ref: str) -> np.ndarray: ...


@runtime_checkable
class Generator(Protocol):
    def generate(self, segments: Sequence[str], image_refs: Sequence[str] = ()) -> str: ...


@runtime_checkable
class TokenCounter(Protocol):
    def count(self, text: str) -> int: ...

    def truncate(self, text: str, cap: int) -> str: ...


class WhitespaceTokenCounter:
    """Default counter: one token per whitespace-delimited word."""

    suffix = "…"

    def count(self, text: str) -> int:
        return len(text.split())

    def truncate(self, text: str, cap: int) -> str:
        words = text.split()
        if len(words) <= cap:
            return text
        # suffix glued to the last kept word so the count stays at ``cap``
        return " ".join(words[:cap]) + self.suffix


@dataclass
class AdmissionGate:
    """Bounded in-flight admission shared by all calls to one backend."""

    max_parallel: int = 4
    _sem: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self):
        self._sem = threading.BoundedSemaphore(self.max_parallel)

    def __enter__(self):
        self._sem.acquire()
        return self

    def __exit__(self, *exc):
        self._sem.release()
        return False
