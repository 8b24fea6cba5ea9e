"""Polarized heterogeneous memory graph with JSON Lines persistence.

Visual episodes point at concept hubs through HAS (verified presence) and
NOT_HAS (verified absence) edges; text chunks point at the same hubs through
ALIGN edges. Uncertain concepts stay on the visual node without edges.
"""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from ._io import atomic_write_bytes
from .errors import CorruptFile, DuplicateEpisode
from .partition import Partition
from .scoring import normalize_concept

FORMAT_VERSION = 1


class NodeKind(str, Enum):
    VISUAL = "visual"
    TEXTUAL = "textual"
    CONCEPT = "concept"


class EdgeKind(str, Enum):
    HAS = "HAS"
    NOT_HAS = "NOT_HAS"
    ALIGN = "ALIGN"


@dataclass(frozen=True, order=True)
class NodeId:
    kind: NodeKind
    key: str

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.key}"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        kind, _, key = text.partition(":")
        return cls(NodeKind(kind), key)


@dataclass
class VisualNode:
    id: NodeId
    source_uri: str
    positive_concepts: frozenset[str] = frozenset()
    negative_concepts: frozenset[str] = frozenset()
    uncertain_concepts: frozenset[str] = frozenset()
    embedding_ref: str | None = None


@dataclass
class TextualNode:
    id: NodeId
    content: str
    entities: frozenset[str] = frozenset()


@dataclass(frozen=True, order=True)
class Edge:
    src: NodeId
    dst: NodeId
    kind: EdgeKind


@dataclass(frozen=True)
class Neighborhood:
    has_sources: frozenset[NodeId] = frozenset()
    not_has_sources: frozenset[NodeId] = frozenset()
    align_sources: frozenset[NodeId] = frozenset()


@dataclass(frozen=True)
class GraphStats:
    verifiable_coverage: float
    max_has_per_image: int
    max_not_has_per_image: int
    total_not_has: int
    total_has: int = 0
    total_align: int = 0
    visual_nodes: int = 0
    textual_nodes: int = 0
    concept_nodes: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class PolarGraph:
    """In-process polarized graph.

    Mutations take an internal lock, so an episode (node plus all of its
    edges) becomes visible atomically to readers using the query methods.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self.visual: dict[str, VisualNode] = {}
        self.textual: dict[str, TextualNode] = {}
        self.concepts: set[str] = set()
        self._uri_index: dict[str, NodeId] = {}
        self._out: dict[NodeId, dict[EdgeKind, set[str]]] = defaultdict(lambda: defaultdict(set))
        self._in: dict[str, dict[EdgeKind, set[NodeId]]] = defaultdict(lambda: defaultdict(set))
        self._text_seq = 0

    # -- mutations -------------------------------------------------------

    def add_visual_episode(self, source_uri: str, partition: Partition, embedding_ref: str | None = None,
                           key: str | None = None) -> NodeId:
        pos = frozenset(normalize_concept(c) for c in partition.positive)
        neg = frozenset(normalize_concept(c) for c in partition.negative)
        unc = frozenset(normalize_concept(c) for c in partition.uncertain)
        if pos & neg or unc & (pos | neg):
            raise ValueError("an episode cannot assert a concept in more than one set")
        with self._lock:
            if source_uri in self._uri_index:
                raise DuplicateEpisode(f"episode {source_uri!r} already ingested")
            node_id = NodeId(NodeKind.VISUAL, key or source_uri)
            if node_id.key in self.visual:
                raise DuplicateEpisode(f"visual key {node_id.key!r} already used")
            self.visual[node_id.key] = VisualNode(node_id, source_uri, pos, neg, unc, embedding_ref)
            self._uri_index[source_uri] = node_id
            self.concepts.update(pos | neg | unc)
            for c in pos:
                self._link(node_id, c, EdgeKind.HAS)
            for c in neg:
                self._link(node_id, c, EdgeKind.NOT_HAS)
            return node_id

    def add_text_chunk(self, content: str, entities: Iterable[str] = (), key: str | None = None) -> NodeId:
        if not content or not content.strip():
            raise ValueError("text chunk content must be non-empty")
        ents = frozenset(normalize_concept(e) for e in entities)
        with self._lock:
            if key is None:
                self._text_seq += 1
                key = f"t{self._text_seq:06d}"
                while key in self.textual:
                    self._text_seq += 1
                    key = f"t{self._text_seq:06d}"
            elif key in self.textual:
                raise DuplicateEpisode(f"text key {key!r} already used")
            node_id = NodeId(NodeKind.TEXTUAL, key)
            self.textual[key] = TextualNode(node_id, content, ents)
            self._align(node_id, ents)
            return node_id

    def relink_text(self) -> int:
        """Add ALIGN edges for chunks whose entities gained logical edges later. Returns edges added."""
        added = 0
        with self._lock:
            for node in self.textual.values():
                before = len(self._out[node.id][EdgeKind.ALIGN])
                self._align(node.id, node.entities)
                added += len(self._out[node.id][EdgeKind.ALIGN]) - before
        return added

    def _align(self, node_id: NodeId, entities: Iterable[str]) -> None:
        for e in entities:
            if self._is_logical(e):
                self._link(node_id, e, EdgeKind.ALIGN)

    def _is_logical(self, concept: str) -> bool:
        hubs = self._in.get(concept)
        return bool(hubs and (hubs.get(EdgeKind.HAS) or hubs.get(EdgeKind.NOT_HAS)))

    def _link(self, src: NodeId, concept: str, kind: EdgeKind) -> None:
        self.concepts.add(concept)
        self._out[src][kind].add(concept)
        self._in[concept][kind].add(src)

    # -- queries ---------------------------------------------------------

    def node(self, node_id: NodeId) -> VisualNode | TextualNode:
        if node_id.kind is NodeKind.VISUAL:
            return self.visual[node_id.key]
        if node_id.kind is NodeKind.TEXTUAL:
            return self.textual[node_id.key]
        raise KeyError(f"{node_id} is a concept hub, not a memory node")

    def by_uri(self, source_uri: str) -> NodeId:
        return self._uri_index[source_uri]

    def memory_nodes(self) -> list[NodeId]:
        with self._lock:
            return sorted([n.id for n in self.visual.values()] + [n.id for n in self.textual.values()])

    def linked(self, node_id: NodeId, kind: EdgeKind) -> frozenset[str]:
        out = self._out.get(node_id)
        if not out:
            return frozenset()
        return frozenset(out.get(kind, ()))

    def concept_neighborhood(self, concept: str) -> Neighborhood:
        hubs = self._in.get(concept)
        if not hubs:
            return Neighborhood()
        with self._lock:
            return Neighborhood(
                frozenset(hubs.get(EdgeKind.HAS, ())),
                frozenset(hubs.get(EdgeKind.NOT_HAS, ())),
                frozenset(hubs.get(EdgeKind.ALIGN, ())),
            )

    def edges(self) -> Iterator[Edge]:
        with self._lock:
            items = [
                Edge(src, NodeId(NodeKind.CONCEPT, c), kind)
                for src, by_kind in self._out.items()
                for kind, dsts in by_kind.items()
                for c in dsts
            ]
        yield from sorted(items)

    def edge_count(self, kind: EdgeKind | None = None) -> int:
        return sum(
            len(dsts)
            for by_kind in self._out.values()
            for k, dsts in by_kind.items()
            if kind is None or k is kind
        )

    def __len__(self) -> int:
        return len(self.visual) + len(self.textual) + len(self.concepts)

    def compute_stats(self) -> GraphStats:
        with self._lock:
            has_counts = [len(self.linked(v.id, EdgeKind.HAS)) for v in self.visual.values()]
            not_counts = [len(self.linked(v.id, EdgeKind.NOT_HAS)) for v in self.visual.values()]
            covered = sum(1 for h, nh in zip(has_counts, not_counts) if h or nh)
            total = len(self.visual)
            return GraphStats(
                verifiable_coverage=covered / total if total else 0.0,
                max_has_per_image=max(has_counts, default=0),
                max_not_has_per_image=max(not_counts, default=0),
                total_not_has=sum(not_counts),
                total_has=sum(has_counts),
                total_align=self.edge_count(EdgeKind.ALIGN),
                visual_nodes=total,
                textual_nodes=len(self.textual),
                concept_nodes=len(self.concepts),
            )

    # -- persistence -----------------------------------------------------

    def records(self) -> list[dict]:
        """Canonically ordered records (header first) as written by :meth:`save`."""
        with self._lock:
            edges = list(self.edges())
            nodes: list[dict] = []
            for c in sorted(self.concepts):
                nodes.append({"t": "node", "kind": NodeKind.CONCEPT.value, "key": c})
            for key in sorted(self.textual):
                n = self.textual[key]
                nodes.append({"t": "node", "kind": NodeKind.TEXTUAL.value, "key": key,
                              "content": n.content, "entities": sorted(n.entities)})
            for key in sorted(self.visual):
                n = self.visual[key]
                nodes.append({"t": "node", "kind": NodeKind.VISUAL.value, "key": key,
                              "source_uri": n.source_uri,
                              "positive": sorted(n.positive_concepts),
                              "negative": sorted(n.negative_concepts),
                              "uncertain": sorted(n.uncertain_concepts),
                              "embedding_ref": n.embedding_ref})
            header = {"t": "header", "v": FORMAT_VERSION, "nodes": len(nodes), "edges": len(edges)}
            edge_recs = [{"t": "edge", "src_kind": e.src.kind.value, "src_key": e.src.key,
                          "dst_key": e.dst.key, "edge_kind": e.kind.value} for e in edges]
            return [header, *nodes, *edge_recs]

    def dumps(self) -> str:
        return "".join(
            json.dumps(rec, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"
            for rec in self.records()
        )

    def save(self, path: str | Path) -> None:
        atomic_write_bytes(path, self.dumps().encode("utf-8"))

    @classmethod
    def load(cls, path: str | Path) -> "PolarGraph":
        try:
            data = Path(path).read_bytes().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFile(f"not UTF-8: {exc}") from exc
        return cls.loads(data)

    @classmethod
    def loads(cls, data: str) -> "PolarGraph":
        g = cls()
        lines = data.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        else:
            raise CorruptFile("missing final newline (truncated file?)", len(lines) or 1)
        if not lines:
            raise CorruptFile("empty file", 1)
        header = _parse_line(lines[0], 1)
        if header.get("t") != "header" or header.get("v") != FORMAT_VERSION:
            raise CorruptFile(f"expected header with v={FORMAT_VERSION}", 1)
        n_nodes = n_edges = 0
        pending_edges: list[tuple[int, dict]] = []
        for lineno, line in enumerate(lines[1:], start=2):
            rec = _parse_line(line, lineno)
            t = rec.get("t")
            try:
                if t == "node":
                    g._load_node(rec)
                    n_nodes += 1
                elif t == "edge":
                    pending_edges.append((lineno, rec))
                    n_edges += 1
                else:
                    raise CorruptFile(f"unknown record type {t!r}", lineno)
            except CorruptFile:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise CorruptFile(f"malformed node record: {exc}", lineno) from exc
        if n_nodes != header.get("nodes") or n_edges != header.get("edges"):
            raise CorruptFile(
                f"header promises {header.get('nodes')} nodes / {header.get('edges')} edges, "
                f"found {n_nodes} / {n_edges} (truncated file?)",
                len(lines),
            )
        for lineno, rec in pending_edges:
            g._load_edge(rec, lineno)
        for node in g.visual.values():
            if (g.linked(node.id, EdgeKind.HAS) != node.positive_concepts
                    or g.linked(node.id, EdgeKind.NOT_HAS) != node.negative_concepts):
                raise CorruptFile(f"edges of {node.id} disagree with its concept sets")
        for node in g.textual.values():
            if not g.linked(node.id, EdgeKind.ALIGN) <= node.entities:
                raise CorruptFile(f"{node.id} aligned to a concept it does not mention")
        return g

    def _load_node(self, rec: dict) -> None:
        kind = NodeKind(rec["kind"])
        key = rec["key"]
        if not isinstance(key, str):
            raise TypeError("key must be a string")
        pool = {NodeKind.CONCEPT: self.concepts, NodeKind.TEXTUAL: self.textual, NodeKind.VISUAL: self.visual}[kind]
        if key in pool:
            raise ValueError(f"duplicate {kind.value} node {key!r}")
        if kind is NodeKind.CONCEPT:
            self.concepts.add(key)
        elif kind is NodeKind.TEXTUAL:
            node_id = NodeId(kind, key)
            self.textual[key] = TextualNode(node_id, rec["content"], frozenset(rec["entities"]))
        else:
            node_id = NodeId(kind, key)
            pos, neg, unc = (frozenset(rec[f]) for f in ("positive", "negative", "uncertain"))
            if pos & neg or unc & (pos | neg):
                raise ValueError("overlapping concept sets on visual node")
            if rec["source_uri"] in self._uri_index:
                raise ValueError(f"duplicate source_uri {rec['source_uri']!r}")
            self.visual[key] = VisualNode(node_id, rec["source_uri"], pos, neg, unc, rec.get("embedding_ref"))
            self._uri_index[rec["source_uri"]] = node_id

    def _load_edge(self, rec: dict, lineno: int) -> None:
        try:
            src = NodeId(NodeKind(rec["src_kind"]), rec["src_key"])
            kind = EdgeKind(rec["edge_kind"])
            dst = rec["dst_key"]
        except (KeyError, ValueError) as exc:
            raise CorruptFile(f"malformed edge record: {exc}", lineno) from exc
        if dst not in self.concepts:
            raise CorruptFile(f"edge to unknown concept {dst!r}", lineno)
        want = NodeKind.TEXTUAL if kind is EdgeKind.ALIGN else NodeKind.VISUAL
        if src.kind is not want:
            raise CorruptFile(f"{kind.value} edge must start at a {want.value} node", lineno)
        pool = self.textual if want is NodeKind.TEXTUAL else self.visual
        if src.key not in pool:
            raise CorruptFile(f"edge from unknown node {src}", lineno)
        if kind is not EdgeKind.ALIGN:
            other = EdgeKind.NOT_HAS if kind is EdgeKind.HAS else EdgeKind.HAS
            if dst in self.linked(src, other):
                raise CorruptFile(f"{src} carries both HAS and NOT_HAS for {dst!r}", lineno)
        self._link(src, dst, kind)

    def canonical(self) -> list[str]:
        """Sorted textual dump used for structural equality checks."""
        return sorted(self.dumps().splitlines())


def _parse_line(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"invalid JSON: {exc.msg}", lineno) from exc
    if not isinstance(rec, dict):
        raise CorruptFile("record is not an object", lineno)
    return rec
