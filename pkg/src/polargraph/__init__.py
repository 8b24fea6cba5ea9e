"""Polarized graph memory: verified presence and absence of concepts, logic-first retrieval."""

from .engine import MemoryEngine, QueryResult
from .graph import EdgeKind, GraphStats, NodeId, NodeKind, PolarGraph
from .index import Field, HybridEmbedding, VectorIndex, serialize_state
from .partition import Partition, ThresholdResult, otsu_threshold, partition_spectrum
from .retrieval import (
    EVIDENCE_TEMPLATE,
    EvidenceItem,
    QueryConstraints,
    RankTuple,
    Status,
    assemble_context,
    logic_state,
    rank_tuples,
    retrieve,
)
from .scoring import ConfidenceSpectrum, TemplateEnsemble, normalize_concept, score_concepts

__version__ = "0.1.0"

__all__ = [
    "EVIDENCE_TEMPLATE", "ConfidenceSpectrum", "EdgeKind", "EvidenceItem", "Field", "GraphStats",
    "HybridEmbedding", "MemoryEngine", "NodeId", "NodeKind", "Partition", "PolarGraph", "QueryConstraints",
    "QueryResult", "RankTuple", "Status", "TemplateEnsemble", "ThresholdResult", "VectorIndex",
    "assemble_context", "logic_state", "normalize_concept", "otsu_threshold", "partition_spectrum",
    "rank_tuples", "retrieve", "score_concepts", "serialize_state",
]
