"""Seeded synthetic benchmark for the edge-polarity ablation.

Each gold query asks for two target concepts (and sometimes one avoided
concept). The world plants, per query:

* a gold episode that holds both targets;
* optionally an adversarial distractor, closer to the query than the gold
  episode, that holds one target but was verified to lack the other (so it
  carries a NOT_HAS edge on a target);
* optionally a confuser, also closer than gold, that never mentions the
  targets at all (no edges on them).

Pure similarity ranking falls for both traps; NOT_HAS edges defeat the
distractor; HAS edges lift gold above the confuser.
"""

from __future__ import annotations

import json
import math
import re
import statistics
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .clients.base import EpisodeRef
from .clients.synthetic import (
    SyntheticEncoder,
    SyntheticExtractor,
    SyntheticParser,
    SyntheticProposer,
    SyntheticScorer,
    SyntheticWorld,
)
from .engine import MemoryEngine
from .graph import GraphStats, NodeId, NodeKind
from .index import Field, serialize_state
from .retrieval import (
    QueryConstraints,
    RankTuple,
    node_content,
    parse_query,
    retrieve,
)
from .scoring import TemplateEnsemble


class AblationConfig(str, Enum):
    VANILLA = "VANILLA"
    POS_ONLY = "POS_ONLY"
    NEG_ONLY = "NEG_ONLY"
    FULL = "FULL"


_ADJECTIVES = ("red", "blue", "green", "striped", "wooden", "metal", "small", "large", "furry", "glass",
               "spotted", "white", "dark", "round", "broken", "wet", "shiny", "old", "plastic", "golden")
_NOUNS = ("dog", "wolf", "husky", "cat", "apple", "pear", "leash", "sled", "tree", "car", "chair", "table",
          "axis", "legend", "arrow", "bowl", "bottle", "kite", "boat", "bridge", "lamp", "book", "clock",
          "flower", "mold", "stem", "seed", "hat", "shoe", "bench")

VOCABULARY: tuple[str, ...] = tuple(f"{a} {n}" for n in _NOUNS for a in _ADJECTIVES)


@dataclass(frozen=True)
class BenchSpec:
    num_episodes: int = 200
    concepts_per_episode: tuple[int, int] = (3, 6)
    distractor_rate: float = 0.5
    noise_sigma: float = 0.1
    seed: int = 7
    k: int = 3
    gamma: float = 0.0
    confuser_rate: float = 0.3
    decoys_per_episode: tuple[int, int] = (2, 4)
    negative_query_rate: float = 0.5
    dim: int = 512
    ensemble_size: int = 8
    kappa: float = 0.5
    alpha: float = 0.5
    token_cap: int = 64
    gold_similarity: float = 0.6
    confuser_similarity: float = 0.85
    distractor_similarity: float = 0.95

    def __post_init__(self):
        lo, hi = self.concepts_per_episode
        dlo, dhi = self.decoys_per_episode
        if self.num_episodes < 1 or self.k < 1 or lo < 1 or hi < lo or dlo < 1 or dhi < dlo:
            raise ValueError("counts must be positive and ranges ordered")
        for name in ("distractor_rate", "confuser_rate", "negative_query_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 < self.gold_similarity < min(self.confuser_similarity, self.distractor_similarity) <= 1:
            raise ValueError("trap similarities must exceed the gold similarity")


@dataclass(frozen=True)
class GoldQuery:
    raw: str
    positive: tuple[str, ...]
    negative: tuple[str, ...]
    gold: str
    distractor: str | None
    confuser: str | None
    gold_evidence: str


@dataclass
class BenchWorld:
    spec: BenchSpec
    world: SyntheticWorld
    queries: list[GoldQuery]
    visual_vectors: dict[str, np.ndarray]
    query_vectors: dict[str, np.ndarray]
    text_chunks: dict[str, tuple[str, ...]]


def _random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _at_similarity(rng: np.random.Generator, u: np.ndarray, cos: float) -> np.ndarray:
    """Unit vector whose cosine with unit ``u`` is exactly ``cos``."""
    r = rng.standard_normal(u.shape[0])
    r -= (r @ u) * u
    r /= np.linalg.norm(r)
    return cos * u + math.sqrt(max(0.0, 1.0 - cos * cos)) * r


def _pick(rng: np.random.Generator, pool: Sequence[str], n: int, exclude: set[str]) -> list[str]:
    avail = [c for c in pool if c not in exclude]
    n = min(n, len(avail))
    return [avail[i] for i in sorted(rng.choice(len(avail), size=n, replace=False))] if n else []


def generate_world(spec: BenchSpec) -> BenchWorld:
    rng = np.random.default_rng(spec.seed)
    vocab = VOCABULARY
    truth: dict[str, frozenset[str]] = {}
    decoys: dict[str, tuple[str, ...]] = {}
    vis: dict[str, np.ndarray] = {}
    qvecs: dict[str, np.ndarray] = {}
    chunks: dict[str, tuple[str, ...]] = {}
    queries: list[GoldQuery] = []
    lo, hi = spec.concepts_per_episode
    dlo, dhi = spec.decoys_per_episode
    counter = 0

    def new_episode(present: set[str], absent_required: set[str], forbidden: set[str], vec) -> str:
        nonlocal counter
        eid = f"ep{counter:05d}"
        counter += 1
        n_extra = max(0, int(rng.integers(lo, hi + 1)) - len(present))
        present = set(present) | set(_pick(rng, vocab, n_extra, present | absent_required | forbidden))
        n_decoy = max(0, int(rng.integers(dlo, dhi + 1)) - len(absent_required))
        absent = sorted(absent_required) + _pick(rng, vocab, n_decoy, present | absent_required | forbidden)
        truth[eid] = frozenset(present)
        decoys[eid] = tuple(absent)
        vis[eid] = vec
        return eid

    remaining = spec.num_episodes
    qi = 0
    while remaining > 0:
        want_d = rng.random() < spec.distractor_rate
        want_c = rng.random() < spec.confuser_rate
        want_n = rng.random() < spec.negative_query_rate
        if 1 + want_d + want_c > remaining:
            break
        c1, c2, n = _pick(rng, vocab, 3, set())
        pos = (c1, c2)
        neg = (n,) if want_n else ()
        u = _random_unit(rng, spec.dim)
        raw = f"Find an image with {c1} and {c2}" + (f" but without {n}" if want_n else "") + f" [q{qi:04d}]"
        qi += 1

        gold = new_episode({c1, c2}, set(neg), set(), _at_similarity(rng, u, spec.gold_similarity))
        gold_evidence = f"image {gold}: " + serialize_state(truth[gold], decoys[gold])
        distractor = confuser = None
        if want_d:
            distractor = new_episode({c2} | set(neg), {c1}, set(),
                                     _at_similarity(rng, u, spec.distractor_similarity))
        if want_c:
            confuser = new_episode(set(), set(), {c1, c2, n}, _at_similarity(rng, u, spec.confuser_similarity))
        remaining -= 1 + want_d + want_c

        entities = (c1,) + tuple(sorted(truth[gold] - {c1, c2}))[:1]
        chunks[f"Field notes on {c1}: observed alongside {', '.join(entities[1:]) or 'nothing else'} [q{qi - 1:04d}]"] = entities
        queries.append(GoldQuery(raw, pos, neg, gold, distractor, confuser, gold_evidence))
        qvecs[raw] = u

    while remaining > 0:
        new_episode(set(), set(), set(), _random_unit(rng, spec.dim))
        remaining -= 1

    world = SyntheticWorld(truth, spec.noise_sigma, spec.seed, decoys)
    return BenchWorld(spec, world, queries, vis, qvecs, chunks)


def build_engine(bench: BenchWorld) -> MemoryEngine:
    spec = bench.spec
    encoder = SyntheticEncoder(spec.dim, spec.seed, planted_text=bench.query_vectors,
                               planted_visual=bench.visual_vectors)
    parser = SyntheticParser({q.raw: (q.positive, q.negative) for q in bench.queries})
    return MemoryEngine(
        scorer=SyntheticScorer(bench.world),
        proposer=SyntheticProposer(bench.world),
        extractor=SyntheticExtractor(bench.text_chunks),
        parser=parser,
        encoder=encoder,
        ensemble=TemplateEnsemble.default(spec.ensemble_size),
        kappa=spec.kappa,
        alpha=spec.alpha,
        k=spec.k,
        token_cap=spec.token_cap,
        max_parallel=1,
        backoff=0.0,
    )


def ingest_world(bench: BenchWorld) -> MemoryEngine:
    """Visual episodes first, then text chunks (alignment needs the concept hubs)."""
    engine = build_engine(bench)
    for eid in sorted(bench.world.episodes):
        engine.ingest_episode(EpisodeRef(eid, eid))
    for content in bench.text_chunks:
        engine.ingest_text(content)
    return engine


_TOKEN_RE = re.compile(r"[a-z0-9_]+")


def token_f1(prediction: str, reference: str) -> float:
    pred = _TOKEN_RE.findall(prediction.lower())
    ref = _TOKEN_RE.findall(reference.lower())
    if not pred or not ref:
        return float(pred == ref)
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return 0.0
    p, r = common / len(pred), common / len(ref)
    return 2 * p * r / (p + r)


def vanilla_rank(constraints: QueryConstraints, engine: MemoryEngine, k: int, gamma: float) -> list[RankTuple]:
    """Similarity-only recall: every node at or above ``gamma``, best first."""
    sims = engine.index.similarities(constraints.query_vec, Field.FUSED)
    kept = [RankTuple(0, s, n) for n, s in sims.items() if s >= gamma]
    kept.sort(key=lambda t: (-t.s_sem, t.node))
    return kept[:k]


def rank_for(config: AblationConfig, constraints: QueryConstraints, engine: MemoryEngine,
             k: int, gamma: float) -> list[RankTuple]:
    config = AblationConfig(config)
    if config is AblationConfig.VANILLA:
        return vanilla_rank(constraints, engine, k, gamma)
    return retrieve(constraints, k, engine.graph, engine.index,
                    use_positive=config is not AblationConfig.NEG_ONLY,
                    use_negative=config is not AblationConfig.POS_ONLY)


def run_config(bench: BenchWorld, engine: MemoryEngine, config: AblationConfig | str) -> tuple[float, float]:
    """(rank-1 gold accuracy, mean token F1 of the top-k evidence against gold evidence)."""
    spec = bench.spec
    hits = 0
    f1s = []
    for q in bench.queries:
        constraints = parse_query(q.raw, engine.parser, engine.encoder)
        ranking = rank_for(config, constraints, engine, spec.k, spec.gamma)
        gold = NodeId(NodeKind.VISUAL, q.gold)
        hits += bool(ranking) and ranking[0].node == gold
        evidence = " ".join(engine.tokenizer.truncate(node_content(t.node, engine.graph), spec.token_cap)
                            for t in ranking)
        f1s.append(token_f1(evidence, q.gold_evidence))
    n = len(bench.queries)
    return (hits / n if n else 0.0, sum(f1s) / n if n else 0.0)


@dataclass
class AblationReport:
    spec: dict
    num_queries: int
    results: dict[str, dict[str, float]]
    stats: dict
    timings: dict[str, float] = field(default_factory=dict)

    def accuracy(self, config: AblationConfig | str) -> float:
        return self.results[AblationConfig(config).value]["accuracy"]

    def f1(self, config: AblationConfig | str) -> float:
        return self.results[AblationConfig(config).value]["f1"]

    def deterministic_view(self) -> dict:
        """Everything except wall-clock timings."""
        return {"spec": self.spec, "num_queries": self.num_queries, "results": self.results, "stats": self.stats}

    def to_dict(self) -> dict:
        return {**self.deterministic_view(), "timings": self.timings}


def run_ablation(spec: BenchSpec) -> AblationReport:
    timings = {}
    t0 = time.perf_counter()
    bench = generate_world(spec)
    timings["generate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    engine = ingest_world(bench)
    timings["ingest"] = time.perf_counter() - t0
    results = {}
    for config in AblationConfig:
        t0 = time.perf_counter()
        acc, f1 = run_config(bench, engine, config)
        timings[f"query_{config.value.lower()}"] = time.perf_counter() - t0
        results[config.value] = {"accuracy": acc, "f1": f1}
    stats: GraphStats = engine.graph.compute_stats()
    spec_dict = asdict(spec)
    return AblationReport(spec_dict, len(bench.queries), results, stats.as_dict(), timings)


def run_seeds(spec: BenchSpec, seeds: Sequence[int]) -> dict:
    """Mean and standard deviation of each config's metrics over several seeds."""
    reports = [run_ablation(replace(spec, seed=s)) for s in seeds]
    summary: dict = {"seeds": list(seeds), "configs": {}}
    for config in AblationConfig:
        accs = [r.accuracy(config) for r in reports]
        f1s = [r.f1(config) for r in reports]
        summary["configs"][config.value] = {
            "accuracy_mean": statistics.fmean(accs),
            "accuracy_std": statistics.pstdev(accs),
            "f1_mean": statistics.fmean(f1s),
            "f1_std": statistics.pstdev(f1s),
        }
    return summary


def format_table(rep: AblationReport) -> str:
    rows = [("config", "accuracy", "f1")]
    rows += [(c.value, f"{rep.accuracy(c):.4f}", f"{rep.f1(c):.4f}") for c in AblationConfig]
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
             for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    s = rep.stats
    lines += [
        "",
        f"queries: {rep.num_queries}",
        f"verifiable coverage: {s['verifiable_coverage']:.4f}",
        f"max HAS / image: {s['max_has_per_image']}",
        f"max NOT_HAS / image: {s['max_not_has_per_image']}",
        f"total NOT_HAS: {s['total_not_has']}",
    ]
    return "\n".join(lines) + "\n"


def report(rep: AblationReport, path: str | Path) -> tuple[Path, Path]:
    """Write ``path`` as JSON and a plain-text table next to it (``.txt``)."""
    path = Path(path)
    path.write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    table = path.with_suffix(".txt")
    table.write_text(format_table(rep), encoding="utf-8")
    return path, table
