"""End-to-end memory engine: ingest episodes and text, answer queries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from .clients.base import (
    BinaryScorer,
    ConceptParser,
    ConceptProposer,
    Encoder,
    EntityExtractor,
    EpisodeRef,
    Generator,
    TokenCounter,
    WhitespaceTokenCounter,
)
from .clients.ops import extract_entities, generate, propose_concepts
from .graph import NodeId, PolarGraph
from .index import DEFAULT_ALPHA, Field, VectorIndex, build_embedding, text_embedding
from .partition import DEFAULT_KAPPA, Partition, partition_spectrum
from .retrieval import (
    EvidenceItem,
    QueryConstraints,
    RankTuple,
    assemble_context,
    collect_evidence,
    parse_query,
    retrieve,
)
from .scoring import ConfidenceSpectrum, TemplateEnsemble, score_concepts

logger = logging.getLogger(__name__)

DEFAULT_SYSTEM_INSTRUCTION = (
    "You are an expert assistant. Use the provided evidence (text and images) to answer the question. "
    "If the evidence is insufficient, answer conservatively."
)


@dataclass
class QueryResult:
    constraints: QueryConstraints
    ranking: list[RankTuple]
    evidence: list[EvidenceItem]
    context: list[str]

    @property
    def image_refs(self) -> list[str]:
        return [e.source_uri for e in self.evidence if e.source_uri]


@dataclass
class EpisodeRecord:
    node: NodeId
    spectrum: ConfidenceSpectrum
    partition: Partition


@dataclass
class MemoryEngine:
    scorer: BinaryScorer
    proposer: ConceptProposer
    extractor: EntityExtractor
    parser: ConceptParser
    encoder: Encoder
    generator: Generator | None = None
    ensemble: TemplateEnsemble = field(default_factory=TemplateEnsemble.default)
    kappa: float = DEFAULT_KAPPA
    alpha: float = DEFAULT_ALPHA
    k: int = 5
    token_cap: int = 128
    strict: bool = True
    max_parallel: int = 4
    retries: int = 2
    backoff: float = 0.1
    system_instruction: str = DEFAULT_SYSTEM_INSTRUCTION
    tokenizer: TokenCounter = field(default_factory=WhitespaceTokenCounter)
    graph: PolarGraph = field(default_factory=PolarGraph)
    index: VectorIndex | None = None

    def __post_init__(self):
        if self.index is None:
            self.index = VectorIndex(self.encoder.dim, self.alpha)

    def ingest_episode(self, episode: EpisodeRef, patches: Sequence = ()) -> EpisodeRecord:
        """Propose, verify and partition concepts, then store the node and its embedding.

        The embedding is built before the graph is touched, so a failing episode
        leaves no partial state behind.
        """
        uri = episode.image_uri or episode.episode_id
        candidates = propose_concepts(episode, self.proposer)
        if candidates:
            spectrum = score_concepts(episode, candidates, self.ensemble, self.scorer,
                                      max_parallel=self.max_parallel, retries=self.retries,
                                      backoff=self.backoff)
        else:
            spectrum = ConfidenceSpectrum(episode.episode_id, {}, len(self.ensemble))
        part = partition_spectrum(spectrum, self.kappa)
        emb = build_embedding(self.encoder.encode_visual(uri), patches, part.positive, part.negative, self.encoder)
        node = self.graph.add_visual_episode(uri, part, key=episode.episode_id)
        self.index.add(node, emb)
        logger.debug("ingested %s: %d HAS, %d NOT_HAS, %d uncertain", node,
                     len(part.positive), len(part.negative), len(part.uncertain))
        return EpisodeRecord(node, spectrum, part)

    def ingest_text(self, content: str, entities: Sequence[str] | None = None) -> NodeId:
        ents = extract_entities(content, self.extractor) if entities is None else set(entities)
        emb = text_embedding(content, self.encoder)
        node = self.graph.add_text_chunk(content, ents)
        self.index.add(node, emb)
        return node

    def rebuild_index(self) -> VectorIndex:
        """Recompute every embedding from the graph (visual refs re-encoded)."""
        idx = VectorIndex(self.encoder.dim, self.alpha)
        for node in self.graph.visual.values():
            emb = build_embedding(self.encoder.encode_visual(node.source_uri), (),
                                  node.positive_concepts, node.negative_concepts, self.encoder)
            idx.add(node.id, emb)
        for node in self.graph.textual.values():
            idx.add(node.id, text_embedding(node.content, self.encoder))
        self.index = idx
        return idx

    def query(self, raw: str, k: int | None = None, strict: bool | None = None,
              field: Field | str = Field.FUSED) -> QueryResult:
        constraints = parse_query(raw, self.parser, self.encoder)
        ranking = retrieve(constraints, k or self.k, self.graph, self.index,
                           strict=self.strict if strict is None else strict, field=field)
        evidence = collect_evidence(ranking, constraints, self.graph)
        context = assemble_context(evidence, self.system_instruction, raw, self.token_cap, self.tokenizer)
        return QueryResult(constraints, ranking, evidence, context)

    def answer(self, raw: str, **kwargs) -> tuple[str, QueryResult]:
        if self.generator is None:
            raise RuntimeError("engine has no generator configured")
        result = self.query(raw, **kwargs)
        return generate(result.context, result.image_refs, self.generator), result
