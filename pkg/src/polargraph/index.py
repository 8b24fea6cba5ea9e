"""Hybrid embeddings and exact brute-force cosine search."""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_write_bytes
from .clients.base import Encoder
from .errors import CorruptFile, DimensionMismatch, EmptyIndex, NormalizationError
from .graph import NodeId, NodeKind

DEFAULT_ALPHA = 0.5
GRID = 1000

_MAGIC = b"PGVX"
_VERSION = 1
_HEADER = struct.Struct("<4sIQI")  # magic, version, row count, dimension


class Field(str, Enum):
    VIS = "VIS"
    SEM = "SEM"
    FUSED = "FUSED"


@dataclass(frozen=True)
class Patch:
    vector: np.ndarray
    coords: tuple[int, int, int, int]

    def __post_init__(self):
        x1, y1, x2, y2 = self.coords
        if not (0 <= x1 < x2 <= GRID and 0 <= y1 < y2 <= GRID):
            raise ValueError(f"patch coords {self.coords} outside the 0-{GRID} grid or empty")


@dataclass
class HybridEmbedding:
    z_vis: np.ndarray
    z_sem: np.ndarray
    z_loc: list[Patch] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return int(self.z_vis.shape[0])


def serialize_state(positive: Iterable[str], negative: Iterable[str]) -> str:
    pos = ", ".join(sorted(set(positive))) or "none"
    neg = ", ".join(sorted(set(negative))) or "none"
    return f"HAS: {pos} | NOT_HAS: {neg}"


def unit(vec, dim: int | None = None) -> np.ndarray:
    """Float32 unit vector; zero or non-finite input has no unit form."""
    v = np.asarray(vec, dtype=np.float64).reshape(-1)
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {v.shape[0]}")
    norm = float(np.linalg.norm(v))
    if not np.isfinite(norm) or norm == 0.0:
        raise NormalizationError("cannot normalize a zero or non-finite vector")
    return (v / norm).astype(np.float32)


def build_embedding(visual_vec, patches: Sequence[tuple[Sequence[float], Sequence[int]]],
                    positive: Iterable[str], negative: Iterable[str], text_encoder: Encoder) -> HybridEmbedding:
    dim = int(text_encoder.dim)
    z_vis = unit(visual_vec, dim)
    z_sem = unit(text_encoder.encode_text(serialize_state(positive, negative)), dim)
    z_loc = [Patch(unit(vec, dim), tuple(int(c) for c in coords)) for vec, coords in patches]
    return HybridEmbedding(z_vis, z_sem, z_loc)


def text_embedding(content: str, text_encoder: Encoder) -> HybridEmbedding:
    """Text chunks have one vector; it serves as both the holistic and the semantic field."""
    z = unit(text_encoder.encode_text(content), int(text_encoder.dim))
    return HybridEmbedding(z, z.copy(), [])


class VectorIndex:
    """Exact cosine search over per-node hybrid embeddings.

    Vectors are stored unit-norm in float32, so cosine reduces to a dot product.
    """

    def __init__(self, dim: int, alpha: float = DEFAULT_ALPHA):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.dim = dim
        self.alpha = alpha
        self._lock = threading.Lock()
        self._ids: list[NodeId] = []
        self._pos: dict[NodeId, int] = {}
        self._vis: list[np.ndarray] = []
        self._sem: list[np.ndarray] = []
        self._loc: list[list[Patch]] = []
        self._snapshot: tuple | None = None

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, node_id: NodeId) -> bool:
        return node_id in self._pos

    def ids(self) -> list[NodeId]:
        return list(self._ids)

    def add(self, node_id: NodeId, emb: HybridEmbedding, normalize: bool = True) -> None:
        """Insert or replace a node's embedding, storing unit-norm float32 rows.

        ``normalize=False`` stores the rows as given (used when loading, so a
        round-trip is bit-exact).
        """
        for v in (emb.z_vis, emb.z_sem, *(p.vector for p in emb.z_loc)):
            if np.shape(v) != (self.dim,):
                raise DimensionMismatch(f"expected dimension {self.dim}, got {np.shape(v)}")
        prep = unit if normalize else (lambda v: np.asarray(v, dtype=np.float32))
        vis, sem = prep(emb.z_vis), prep(emb.z_sem)
        loc = [Patch(prep(p.vector), p.coords) for p in emb.z_loc]
        with self._lock:
            if node_id in self._pos:
                i = self._pos[node_id]
                self._vis[i], self._sem[i], self._loc[i] = vis, sem, loc
            else:
                self._pos[node_id] = len(self._ids)
                self._ids.append(node_id)
                self._vis.append(vis)
                self._sem.append(sem)
                self._loc.append(loc)
            self._snapshot = None

    def get(self, node_id: NodeId) -> HybridEmbedding:
        i = self._pos[node_id]
        return HybridEmbedding(self._vis[i], self._sem[i], list(self._loc[i]))

    def _matrices(self):
        snap = self._snapshot
        if snap is None:
            with self._lock:
                if not self._ids:
                    raise EmptyIndex("index has no entries")
                snap = (list(self._ids),
                        np.stack(self._vis).astype(np.float64),
                        np.stack(self._sem).astype(np.float64))
                self._snapshot = snap
        return snap

    def similarities(self, query_vec, field: Field | str = Field.FUSED,
                     alpha: float | None = None) -> dict[NodeId, float]:
        ids, sims = self._scores(query_vec, field, alpha)
        return dict(zip(ids, sims.tolist()))

    def _scores(self, query_vec, field, alpha):
        field = Field(field)
        ids, vis, sem = self._matrices()
        q = unit(query_vec, self.dim).astype(np.float64)
        if field is Field.VIS:
            sims = vis @ q
        elif field is Field.SEM:
            sims = sem @ q
        else:
            a = self.alpha if alpha is None else alpha
            sims = a * (vis @ q) + (1.0 - a) * (sem @ q)
        return ids, np.clip(sims, -1.0, 1.0)

    def search(self, query_vec, k: int, field: Field | str = Field.FUSED,
               alpha: float | None = None) -> list[tuple[NodeId, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        ids, sims = self._scores(query_vec, field, alpha)
        order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))[:k]
        return [(ids[i], float(sims[i])) for i in order]

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path) -> Path:
        """Write the float32 row file and its ``.manifest.jsonl`` sidecar; returns the sidecar path."""
        path = Path(path)
        rows: list[np.ndarray] = []
        manifest: list[dict] = []
        with self._lock:
            for node_id, vis, sem, loc in zip(self._ids, self._vis, self._sem, self._loc):
                base = {"kind": node_id.kind.value, "key": node_id.key}
                manifest.append({**base, "row": len(rows), "field": "vis"})
                rows.append(vis)
                manifest.append({**base, "row": len(rows), "field": "sem"})
                rows.append(sem)
                for p in loc:
                    manifest.append({**base, "row": len(rows), "field": "loc", "coords": list(p.coords)})
                    rows.append(p.vector)
        body = np.stack(rows).astype("<f4").tobytes() if rows else b""
        atomic_write_bytes(path, _HEADER.pack(_MAGIC, _VERSION, len(rows), self.dim) + body)
        sidecar = manifest_path(path)
        meta = {"t": "meta", "alpha": self.alpha, "dim": self.dim, "rows": len(rows)}
        lines = [json.dumps(meta, sort_keys=True)] + [json.dumps(m, sort_keys=True) for m in manifest]
        atomic_write_bytes(sidecar, ("\n".join(lines) + "\n").encode("utf-8"))
        return sidecar

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        path = Path(path)
        raw = path.read_bytes()
        if len(raw) < _HEADER.size:
            raise CorruptFile("vector file shorter than its header")
        magic, version, count, dim = _HEADER.unpack_from(raw)
        if magic != _MAGIC or version != _VERSION:
            raise CorruptFile("not a vector file or unsupported version")
        expected = _HEADER.size + count * dim * 4
        if len(raw) != expected:
            raise CorruptFile(f"vector file holds {len(raw)} bytes, header implies {expected}")
        mat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, dim) if count else None

        try:
            lines = manifest_path(path).read_text(encoding="utf-8").splitlines()
        except (OSError, UnicodeDecodeError) as exc:
            raise CorruptFile(f"cannot read manifest: {exc}") from exc
        records = []
        for lineno, line in enumerate(lines, start=1):
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorruptFile(f"manifest: invalid JSON: {exc.msg}", lineno) from exc
        if not records or records[0].get("t") != "meta":
            raise CorruptFile("manifest lacks its meta record", 1)
        meta = records[0]
        if meta.get("dim") != dim or meta.get("rows") != count or len(records) - 1 != count:
            raise CorruptFile("manifest disagrees with vector file header", 1)

        idx = cls(dim, alpha=float(meta.get("alpha", DEFAULT_ALPHA)))
        pending: dict[NodeId, dict] = {}  # insertion order = file order
        for lineno, rec in enumerate(records[1:], start=2):
            try:
                node_id = NodeId(NodeKind(rec["kind"]), rec["key"])
                row = mat[int(rec["row"])].astype(np.float32)
                entry = pending.setdefault(node_id, {"vis": None, "sem": None, "loc": []})
                if rec["field"] == "loc":
                    entry["loc"].append(Patch(row, tuple(rec["coords"])))
                elif rec["field"] in ("vis", "sem"):
                    entry[rec["field"]] = row
                else:
                    raise ValueError(f"unknown field {rec['field']!r}")
            except (KeyError, ValueError, IndexError, TypeError) as exc:
                raise CorruptFile(f"manifest: {exc}", lineno) from exc
        for node_id, e in pending.items():
            if e["vis"] is None or e["sem"] is None:
                raise CorruptFile(f"manifest: {node_id} lacks a vis or sem row")
            idx.add(node_id, HybridEmbedding(e["vis"], e["sem"], e["loc"]), normalize=False)
        return idx


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.jsonl")
