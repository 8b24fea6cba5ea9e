"""Logic-first retrieval: rank memories by (logic state, similarity), then serialize evidence."""

from __future__ import annotations

import heapq
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .clients.base import ConceptParser, Encoder, Generator, TokenCounter, WhitespaceTokenCounter
from .errors import BackendError, EmptyGraph, EmptyIndex, MissingEmbedding, ParserMalformedOutput
from .graph import EdgeKind, NodeId, NodeKind, PolarGraph
from .index import Field, VectorIndex, serialize_state, unit
from .scoring import normalize_many

logger = logging.getLogger(__name__)

EVIDENCE_TEMPLATE = "[Fact Check: {status}] {content}"

CONFLICT, NEUTRAL, ENTAILED = -1, 0, 1


class Status(str, Enum):
    VERIFIED_PRESENT = "VERIFIED_PRESENT"
    VERIFIED_ABSENT_CONSTRAINT = "VERIFIED_ABSENT_CONSTRAINT"
    UNVERIFIED = "UNVERIFIED"


@dataclass(frozen=True)
class QueryConstraints:
    positive: tuple[str, ...]
    negative: tuple[str, ...]
    raw_query: str = ""
    query_vec: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if set(self.positive) & set(self.negative):
            raise ValueError("a concept cannot be both a target and an avoidance constraint")

    @classmethod
    def build(cls, positive: Iterable[str] = (), negative: Iterable[str] = (), raw_query: str = "",
              query_vec=None) -> "QueryConstraints":
        pos = normalize_many(positive)
        neg = [c for c in normalize_many(negative) if c not in set(pos)]
        return cls(tuple(pos), tuple(neg), raw_query, query_vec)


@dataclass(frozen=True, order=True)
class RankTuple:
    s_log: int
    s_sem: float
    node: NodeId

    def __post_init__(self):
        if self.s_log not in (CONFLICT, NEUTRAL, ENTAILED):
            raise ValueError(f"s_log must be -1, 0 or 1, got {self.s_log}")


@dataclass(frozen=True)
class EvidenceItem:
    node: NodeId
    status: Status
    content: str
    rank: int
    source_uri: str | None = None

    def render(self, content: str | None = None) -> str:
        return EVIDENCE_TEMPLATE.format(status=self.status.value,
                                        content=self.content if content is None else content)


# -- parsing ------------------------------------------------------------

_OBJECT_RE = re.compile(r"\{.*\}", re.DOTALL)


def _decode_constraints(reply: str) -> tuple[list, list] | None:
    candidates = [reply.strip()]
    m = _OBJECT_RE.search(reply)
    if m:
        candidates.append(m.group(0))
    for text in candidates:
        try:
            obj = json.loads(text)
        except (json.JSONDecodeError, TypeError):
            continue
        if not isinstance(obj, dict):
            continue
        pos, neg = obj.get("positive"), obj.get("negative")
        if isinstance(pos, list) and isinstance(neg, list):
            return ([p for p in pos if isinstance(p, str)], [n for n in neg if isinstance(n, str)])
    return None


def parse_query(raw: str, parser: ConceptParser, encoder: Encoder) -> QueryConstraints:
    """Turn an instruction into target / avoidance concept sets plus its query vector.

    If a concept shows up on both sides, the target wins. A malformed reply
    gets one repair round before :class:`ParserMalformedOutput`.
    """
    if not raw or not raw.strip():
        raise ValueError("query must be non-empty")
    reply = parser.parse_constraints(raw)
    decoded = _decode_constraints(reply)
    if decoded is None:
        logger.info("query parser reply malformed, requesting repair")
        reply = parser.parse_constraints(
            raw, repair_hint='Return ONLY a JSON object of the form {"positive": [...], "negative": [...]}.')
        decoded = _decode_constraints(reply)
    if decoded is None:
        raise ParserMalformedOutput(f"parser reply lacks 'positive'/'negative' lists: {reply[:200]!r}")
    pos, neg = decoded
    return QueryConstraints.build(pos, neg, raw, unit(encoder.encode_text(raw), int(encoder.dim)))


# -- logic --------------------------------------------------------------

def node_concepts(node: NodeId, graph: PolarGraph, use_positive: bool = True,
                  use_negative: bool = True) -> tuple[frozenset[str], frozenset[str]]:
    """(C+, C-) for a memory node. Text chunks count their ALIGN links as C+ and have no C-."""
    if node.kind is NodeKind.VISUAL:
        pos = graph.linked(node, EdgeKind.HAS)
        neg = graph.linked(node, EdgeKind.NOT_HAS)
    elif node.kind is NodeKind.TEXTUAL:
        pos = graph.linked(node, EdgeKind.ALIGN)
        neg = frozenset()
    else:
        raise ValueError(f"{node} is not a memory node")
    return (pos if use_positive else frozenset(), neg if use_negative else frozenset())


def logic_state(node: NodeId, constraints: QueryConstraints, graph: PolarGraph,
                use_positive: bool = True, use_negative: bool = True) -> int:
    """-1 on conflict (checked first), 1 on entailment, else 0.

    ``use_positive`` / ``use_negative`` mask HAS-type or NOT_HAS edges for ablations.
    """
    c_pos, c_neg = node_concepts(node, graph, use_positive, use_negative)
    q_pos, q_neg = set(constraints.positive), set(constraints.negative)
    if (q_pos & c_neg) or (q_neg & c_pos):
        return CONFLICT
    if q_pos & c_pos:
        return ENTAILED
    return NEUTRAL


# -- ranking ------------------------------------------------------------

def rank_tuples(tuples: Iterable[RankTuple], k: int, strict: bool = True) -> list[RankTuple]:
    """Top-k by descending (s_log, s_sem), ties on ascending node id.

    Tiers are filled best-first; conflicts are only reachable when ``strict``
    is off and the better tiers hold fewer than k nodes.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    tiers: dict[int, list[RankTuple]] = {ENTAILED: [], NEUTRAL: [], CONFLICT: []}
    for t in tuples:
        tiers[t.s_log].append(t)
    order = (ENTAILED, NEUTRAL) if strict else (ENTAILED, NEUTRAL, CONFLICT)
    out: list[RankTuple] = []
    for tier in order:
        need = k - len(out)
        if need <= 0:
            break
        out.extend(heapq.nsmallest(need, tiers[tier], key=lambda t: (-t.s_sem, t.node)))
    return out


def score_nodes(constraints: QueryConstraints, graph: PolarGraph, index: VectorIndex,
                field: Field | str = Field.FUSED, alpha: float | None = None,
                use_positive: bool = True, use_negative: bool = True) -> list[RankTuple]:
    nodes = graph.memory_nodes()
    if not nodes:
        raise EmptyGraph("graph has no memory nodes")
    if constraints.query_vec is None:
        raise ValueError("constraints carry no query vector")
    try:
        sims = index.similarities(constraints.query_vec, field, alpha)
    except EmptyIndex as exc:
        raise MissingEmbedding("vector index is empty but the graph has memory nodes") from exc
    out = []
    for n in nodes:
        if n not in sims:
            raise MissingEmbedding(f"{n} has no entry in the vector index")
        out.append(RankTuple(logic_state(n, constraints, graph, use_positive, use_negative), sims[n], n))
    return out


def retrieve(constraints: QueryConstraints, k: int, graph: PolarGraph, index: VectorIndex, *,
             strict: bool = True, field: Field | str = Field.FUSED, alpha: float | None = None,
             use_positive: bool = True, use_negative: bool = True) -> list[RankTuple]:
    tuples = score_nodes(constraints, graph, index, field, alpha, use_positive, use_negative)
    return rank_tuples(tuples, k, strict)


# -- evidence & context -------------------------------------------------

def evidence_status(t: RankTuple, constraints: QueryConstraints, graph: PolarGraph) -> Status:
    if t.s_log == ENTAILED:
        return Status.VERIFIED_PRESENT
    if t.s_log == NEUTRAL and t.node.kind is NodeKind.VISUAL:
        if set(constraints.negative) & graph.linked(t.node, EdgeKind.NOT_HAS):
            return Status.VERIFIED_ABSENT_CONSTRAINT
    return Status.UNVERIFIED


def node_content(node: NodeId, graph: PolarGraph) -> str:
    if node.kind is NodeKind.TEXTUAL:
        return graph.textual[node.key].content
    v = graph.visual[node.key]
    return f"image {node.key}: " + serialize_state(v.positive_concepts, v.negative_concepts)


def collect_evidence(results: Sequence[RankTuple], constraints: QueryConstraints,
                     graph: PolarGraph) -> list[EvidenceItem]:
    items = []
    for rank, t in enumerate(results, start=1):
        uri = graph.visual[t.node.key].source_uri if t.node.kind is NodeKind.VISUAL else None
        items.append(EvidenceItem(t.node, evidence_status(t, constraints, graph),
                                  node_content(t.node, graph), rank, uri))
    return items


def assemble_context(evidence: Sequence[EvidenceItem], system_instruction: str, raw_query: str,
                     per_item_token_cap: int, tokenizer: TokenCounter | None = None) -> list[str]:
    """[system, evidence..., query] with rank 1 placed next to the query."""
    if per_item_token_cap < 1:
        raise ValueError("per_item_token_cap must be >= 1")
    tok = tokenizer or WhitespaceTokenCounter()
    ordered = sorted(evidence, key=lambda e: e.rank, reverse=True)
    segments = [system_instruction]
    segments.extend(e.render(tok.truncate(e.content, per_item_token_cap)) for e in ordered)
    segments.append(raw_query)
    return segments


RERANK_PROMPT = (
    "You are a strict evaluator. Select the single best answer that directly and correctly answers the question.\n"
    "Return ONLY the index number (0-based) as a single integer.\n\n"
    "Question: {question}\n\n"
    "Candidates:\n{items}"
)

_INDEX_RE = re.compile(r"\s*(\d+)\s*\.?\s*")


def rerank_candidates(question: str, candidates: Sequence[str], generator: Generator) -> int:
    if not candidates:
        raise ValueError("candidates must be non-empty")
    if len(candidates) == 1:
        return 0
    items = "\n".join(f"{i}. {c}" for i, c in enumerate(candidates))
    try:
        reply = generator.generate([RERANK_PROMPT.format(question=question, items=items)], [])
    except BackendError:
        return 0
    m = _INDEX_RE.fullmatch(reply or "")
    if not m:
        return 0
    i = int(m.group(1))
    return i if i < len(candidates) else 0
