"""OpenAI-compatible chat/embeddings backend.

One :class:`OpenAICompatClient` talks to an endpoint; thin adapters expose it
through each of the package's client protocols.
"""

from __future__ import annotations

import logging
import math
import time
from typing import Any, Sequence

import httpx
import numpy as np

from ..errors import BackendError, DimensionMismatch
from .base import AdmissionGate, ClientConfig, EpisodeRef

logger = logging.getLogger(__name__)

YES_VARIANTS = ("Yes", "yes", "YES")

PROPOSE_PROMPT = (
    "List key visual concepts for retrieval as a comma-separated list. Cover multiple facets: "
    "category/identity, shape/parts/structure, visual attributes (color/texture/spots/mold), and "
    "state/condition if visible. Avoid generic words like 'characteristics' or 'feature'. "
    "Output strictly as a comma-separated list of short phrases (max 40 items)."
)

EXTRACT_PROMPTS = {
    "json": (
        "You are an information extraction engine.\n"
        "Extract key entities, methods, datasets, metrics, and core topics.\n"
        "OUTPUT RULES (must follow):\n"
        "1) Output ONLY a valid JSON array of strings.\n"
        "2) No explanation, no extra text.\n"
        "3) If you cannot comply, output [] only.\n"
        'Example: ["mscoco","flickr30k","transformer","recall@1","map"]\n\n'
        "TEXT:\n{text}"
    ),
    "lines": (
        "Extract key entities, methods, datasets, metrics, and core topics.\n"
        "OUTPUT RULES:\n"
        "1) Output ONLY concepts.\n"
        "2) One concept per line.\n"
        "3) No numbering, no bullets, no explanation.\n"
        "4) If none, output EMPTY.\n\n"
        "TEXT:\n{text}"
    ),
    "tagged": (
        "Extract key entities, methods, datasets, metrics, and core topics.\n"
        "Return concepts inside <CONCEPTS>...</CONCEPTS>, one per line.\n"
        "If none, return <CONCEPTS></CONCEPTS>.\n\n"
        "TEXT:\n{text}"
    ),
}

PARSE_PROMPT = (
    "Extract key visual concepts for image retrieval from the question.\n"
    "Rules:\n"
    "- 'positive': concepts that SHOULD appear in the target image.\n"
    "- 'negative': concepts explicitly stated as NOT wanted OR explicitly stated as unlikely in the question.\n"
    "  If no negative concepts, use [].\n\n"
    "Output ONLY valid JSON and nothing else.\n"
    'Format: {{"positive": [...], "negative": [...]}}\n\n'
    "Question: {query}\n\n"
    "JSON:"
)


def text_to_probability(text: str) -> float:
    reply = (text or "").strip().rstrip(".!").strip()
    if reply in YES_VARIANTS:
        return 1.0
    if reply in ("No", "no", "NO"):
        return 0.0
    return 0.5


def yes_probability(choice: dict) -> float:
    """P("Yes") from first-token logprobs when present, else the text mapping."""
    content = ((choice.get("logprobs") or {}).get("content")) or []
    if content:
        first = content[0]
        candidates = first.get("top_logprobs") or [first]
        mass = sum(
            math.exp(c["logprob"])
            for c in candidates
            if isinstance(c, dict) and str(c.get("token", "")).strip() in YES_VARIANTS and "logprob" in c
        )
        return min(max(mass, 0.0), 1.0)
    return text_to_probability((choice.get("message") or {}).get("content") or "")


class OpenAICompatClient:
    def __init__(self, config: ClientConfig, transport: httpx.BaseTransport | None = None,
                 sleep=time.sleep):
        self.config = config
        self._gate = AdmissionGate(config.max_parallel)
        self._sleep = sleep
        self._http = httpx.Client(base_url=config.endpoint_url.rstrip("/") + "/",
                                  timeout=config.timeout, transport=transport)
        self.attempts = 0

    def close(self) -> None:
        self._http.close()

    def _headers(self) -> dict[str, str]:
        key = self.config.api_key()
        return {"Authorization": f"Bearer {key}"} if key else {}

    def post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        """POST with retries on transport errors, timeouts, 429 and 5xx; other 4xx fail at once."""
        last: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            self.attempts += 1
            try:
                with self._gate:
                    resp = self._http.post(path, json=payload, headers=self._headers())
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise BackendError(f"{path}: HTTP {resp.status_code}")
                if resp.status_code >= 400:
                    raise BackendError(f"{path}: HTTP {resp.status_code}: {resp.text[:200]}")
                return resp.json()
            except BackendError as exc:
                if 400 <= resp.status_code < 500 and resp.status_code != 429:
                    raise
                last = exc
            except (httpx.HTTPError, ValueError) as exc:
                last = exc
            logger.warning("request to %s failed (attempt %d/%d): %s",
                           path, attempt + 1, self.config.max_retries + 1, type(last).__name__)
            if attempt < self.config.max_retries and self.config.retry_backoff > 0:
                self._sleep(self.config.retry_backoff * 2**attempt)
        raise BackendError(f"{path} failed after {self.config.max_retries + 1} attempts: {last}") from last

    def chat(self, content: Sequence[dict] | str, *, system: str | None = None,
             image_refs: Sequence[str] = (), **extra) -> dict:
        if isinstance(content, str):
            content = [{"type": "text", "text": content}]
        parts = [{"type": "image_url", "image_url": {"url": u}} for u in image_refs] + list(content)
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": parts})
        body = self.post("chat/completions", {"model": self.config.model_name, "messages": messages, **extra})
        try:
            return body["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {exc}") from exc

    def complete(self, prompt: str, image_refs: Sequence[str] = (), **extra) -> str:
        choice = self.chat(prompt, image_refs=image_refs, **extra)
        return (choice.get("message") or {}).get("content") or ""


class HttpScorer:
    def __init__(self, client: OpenAICompatClient, use_logprobs: bool = True):
        self.client = client
        self.use_logprobs = use_logprobs

    def binary_score(self, episode: EpisodeRef, concept: str, prompt: str, template_index: int) -> float:
        extra: dict[str, Any] = {"max_tokens": 1, "temperature": 0}
        if self.use_logprobs:
            extra.update(logprobs=True, top_logprobs=5)
        refs = [episode.image_uri] if episode.image_uri else []
        return yes_probability(self.client.chat(prompt, image_refs=refs, **extra))


class HttpProposer:
    def __init__(self, client: OpenAICompatClient, prompt: str = PROPOSE_PROMPT):
        self.client = client
        self.prompt = prompt

    def propose(self, episode: EpisodeRef) -> str:
        refs = [episode.image_uri] if episode.image_uri else []
        return self.client.complete(self.prompt, image_refs=refs, temperature=0)


class HttpExtractor:
    def __init__(self, client: OpenAICompatClient):
        self.client = client

    def extract(self, text: str, style: str) -> str:
        return self.client.complete(EXTRACT_PROMPTS[style].replace("{text}", text), temperature=0)


class HttpParser:
    def __init__(self, client: OpenAICompatClient):
        self.client = client

    def parse_constraints(self, query: str, repair_hint: str | None = None) -> str:
        prompt = PARSE_PROMPT.format(query=query)
        if repair_hint:
            prompt += "\n" + repair_hint
        return self.client.complete(prompt, temperature=0)


class HttpGenerator:
    def __init__(self, client: OpenAICompatClient, **sampling):
        self.client = client
        self.sampling = sampling

    def generate(self, segments: Sequence[str], image_refs: Sequence[str] = ()) -> str:
        system, rest = (segments[0], segments[1:]) if len(segments) > 1 else (None, segments)
        content = [{"type": "text", "text": s} for s in rest]
        choice = self.client.chat(content, system=system, image_refs=image_refs, **self.sampling)
        return (choice.get("message") or {}).get("content") or ""


class HttpEncoder:
    """Embeddings through ``/embeddings``; visual refs are sent as the input string."""

    def __init__(self, client: OpenAICompatClient, dim: int):
        self.client = client
        self.dim = dim

    def _embed(self, item: str) -> np.ndarray:
        model = self.client.config.embedding_model or self.client.config.model_name
        body = self.client.post("embeddings", {"model": model, "input": item})
        try:
            vec = np.asarray(body["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed embeddings response: {exc}") from exc
        if vec.shape != (self.dim,):
            raise DimensionMismatch(f"backend returned dimension {vec.shape[0]}, configured {self.dim}")
        return vec

    def encode_text(self, text: str) -> np.ndarray:
        return self._embed(text)

    def encode_visual(self, ref: str) -> np.ndarray:
        return self._embed(ref)
