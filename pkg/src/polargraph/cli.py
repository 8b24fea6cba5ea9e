"""Command-line entry point: ``polargraph {ingest,build,query,stats,eval}``.

Exit codes: 0 ok, 2 config error, 3 backend error, 4 corrupt store.

``ingest`` reads JSON Lines records. Image records look like
``{"id": "ep1", "uri": "img/1.png", "truth": [...], "decoys": [...]}``
(``truth``/``decoys`` drive the synthetic backend and are ignored over HTTP);
text records look like ``{"type": "text", "content": "...", "entities": [...]}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .clients.base import EpisodeRef
from .clients.synthetic import (
    EchoGenerator,
    KeywordParser,
    SyntheticEncoder,
    SyntheticExtractor,
    SyntheticProposer,
    SyntheticScorer,
    SyntheticWorld,
)
from .config import EngineConfig, load_config
from .engine import MemoryEngine
from .errors import BackendError, ConfigError, CorruptFile, PolarGraphError, ScorerUnavailable
from .graph import PolarGraph
from .harness import BenchSpec, format_table, report, run_ablation, run_seeds
from .index import VectorIndex
from .scoring import TemplateEnsemble

logger = logging.getLogger("polargraph")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_CORRUPT = 0, 2, 3, 4


def _read_records(path: str) -> list[dict]:
    records = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
                if not isinstance(rec, dict):
                    raise ConfigError(f"{path}:{lineno}: record must be an object")
                records.append(rec)
    except OSError as exc:
        raise ConfigError(f"cannot read input {path}: {exc}") from exc
    return records


def _ensemble(cfg: EngineConfig) -> TemplateEnsemble:
    if cfg.templates:
        try:
            return TemplateEnsemble.from_file(cfg.templates)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"bad template file {cfg.templates}: {exc}") from exc
    try:
        return TemplateEnsemble.default(cfg.ensemble_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def make_engine(cfg: EngineConfig, graph: PolarGraph, records: Sequence[dict] = ()) -> MemoryEngine:
    """Wire an engine for the configured backend around an existing graph."""
    if cfg.backend == "http":
        from .clients.http import (HttpEncoder, HttpExtractor, HttpGenerator, HttpParser, HttpProposer,
                                   HttpScorer, OpenAICompatClient)

        client = OpenAICompatClient(cfg.client)
        parts = dict(scorer=HttpScorer(client), proposer=HttpProposer(client), extractor=HttpExtractor(client),
                     parser=HttpParser(client), encoder=HttpEncoder(client, cfg.dim),
                     generator=HttpGenerator(client))
    else:
        truth = {str(r["id"]): frozenset(r.get("truth", ())) for r in records if r.get("type", "image") == "image"}
        decoys = {str(r["id"]): tuple(r.get("decoys", ())) for r in records if r.get("type", "image") == "image"}
        world = SyntheticWorld(truth, 0.0, cfg.seed, decoys)
        texts = {r["content"]: tuple(r.get("entities", ())) for r in records if r.get("type") == "text"}
        parts = dict(scorer=SyntheticScorer(world), proposer=SyntheticProposer(world),
                     extractor=SyntheticExtractor(texts), parser=KeywordParser(sorted(graph.concepts)),
                     encoder=SyntheticEncoder(cfg.dim, cfg.seed), generator=EchoGenerator())
    return MemoryEngine(ensemble=_ensemble(cfg), kappa=cfg.kappa, alpha=cfg.alpha, k=cfg.k,
                        token_cap=cfg.token_cap, strict=cfg.strict, graph=graph,
                        max_parallel=cfg.client.max_parallel, **parts)


def _load_graph(path: str | None, must_exist: bool) -> PolarGraph:
    if path and Path(path).exists():
        return PolarGraph.load(path)
    if must_exist:
        raise ConfigError(f"graph file not found: {path}")
    return PolarGraph()


def _load_index(path: str | None, cfg: EngineConfig, engine: MemoryEngine) -> VectorIndex:
    if path and Path(path).exists():
        idx = VectorIndex.load(path)
        if idx.dim != cfg.dim:
            raise ConfigError(f"index dimension {idx.dim} does not match configured dim {cfg.dim}")
        return idx
    return engine.rebuild_index()


def _emit(payload: dict, fmt: str, table: str | None = None) -> None:
    if fmt == "json":
        print(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False))
    else:
        print(table if table is not None else "\n".join(f"{k:<24} {v}" for k, v in payload.items()))


def cmd_ingest(args, cfg: EngineConfig) -> int:
    if not args.graph:
        raise ConfigError("ingest requires --graph")
    records = _read_records(args.input)
    graph = _load_graph(args.graph, must_exist=False)
    engine = make_engine(cfg, graph, records)
    images = texts = 0
    for rec in records:
        if rec.get("type", "image") == "text":
            if "content" not in rec:
                raise ConfigError("text record without content")
            engine.ingest_text(rec["content"], rec.get("entities"))
            texts += 1
        else:
            if "id" not in rec:
                raise ConfigError("image record without id")
            engine.ingest_episode(EpisodeRef(str(rec["id"]), rec.get("uri")))
            images += 1
    graph.save(args.graph)
    if args.index:
        engine.rebuild_index().save(args.index)
    _emit({"images": images, "texts": texts, "graph": args.graph}, args.format)
    return EXIT_OK


def cmd_build(args, cfg: EngineConfig) -> int:
    if not args.graph or not args.index:
        raise ConfigError("build requires --graph and --index")
    engine = make_engine(cfg, _load_graph(args.graph, must_exist=True))
    idx = engine.rebuild_index()
    idx.save(args.index)
    _emit({"rows": len(idx), "dim": idx.dim, "index": args.index}, args.format)
    return EXIT_OK


def cmd_query(args, cfg: EngineConfig) -> int:
    engine = make_engine(cfg, _load_graph(args.graph, must_exist=True))
    engine.index = _load_index(args.index, cfg, engine)
    result = engine.query(args.text, k=args.k, strict=args.strict)
    rows = [{"rank": e.rank, "node": str(e.node), "status": e.status.value, "s_log": t.s_log,
             "s_sem": round(t.s_sem, 6), "evidence": e.render()}
            for t, e in zip(result.ranking, result.evidence)]
    payload = {"positive": list(result.constraints.positive), "negative": list(result.constraints.negative),
               "results": rows, "context": result.context}
    lines = [f"positive: {', '.join(result.constraints.positive) or 'none'}",
             f"negative: {', '.join(result.constraints.negative) or 'none'}"]
    lines += [f"{r['rank']:>3}  {r['s_log']:>2}  {r['s_sem']:.4f}  {r['evidence']}" for r in rows]
    _emit(payload, args.format, "\n".join(lines))
    return EXIT_OK


def cmd_stats(args, cfg: EngineConfig) -> int:
    graph = _load_graph(args.graph, must_exist=True)
    _emit(graph.compute_stats().as_dict(), args.format)
    return EXIT_OK


def cmd_eval(args, cfg: EngineConfig) -> int:
    spec = BenchSpec(num_episodes=args.episodes, distractor_rate=args.distractor_rate,
                     noise_sigma=args.noise, seed=cfg.seed if args.seed is None else args.seed)
    if args.seeds > 1:
        seeds = [spec.seed + i for i in range(args.seeds)]
        summary = run_seeds(spec, seeds)
        if args.out:
            Path(args.out).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        table = "\n".join(f"{c:<10} acc {v['accuracy_mean']:.3f} ± {v['accuracy_std']:.3f}  "
                          f"f1 {v['f1_mean']:.3f} ± {v['f1_std']:.3f}"
                          for c, v in summary["configs"].items())
        _emit(summary, args.format, table)
        return EXIT_OK
    rep = run_ablation(spec)
    if args.out:
        report(rep, args.out)
    _emit(rep.to_dict(), args.format, format_table(rep))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--graph", help="graph JSONL path")
    common.add_argument("--index", help="vector store path")
    common.add_argument("--out", help="output path")
    common.add_argument("--strict", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--format", choices=("json", "table"), default="table")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="polargraph", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    ing = sub.add_parser("ingest", parents=[common], help="ingest image and text records")
    ing.add_argument("input", help="JSONL records")
    sub.add_parser("build", parents=[common], help="rebuild the vector store from the graph")
    q = sub.add_parser("query", parents=[common], help="retrieve evidence for a query")
    q.add_argument("text")
    q.add_argument("-k", type=int, default=None)
    sub.add_parser("stats", parents=[common], help="print graph statistics")
    ev = sub.add_parser("eval", parents=[common], help="run the synthetic polarity ablation")
    ev.add_argument("--episodes", type=int, default=200)
    ev.add_argument("--distractor-rate", type=float, default=0.5)
    ev.add_argument("--noise", type=float, default=0.1)
    ev.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to average")
    return p


COMMANDS = {"ingest": cmd_ingest, "build": cmd_build, "query": cmd_query, "stats": cmd_stats, "eval": cmd_eval}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.strict is not None:
            cfg.strict = args.strict
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptFile as exc:
        print(f"corrupt store: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (BackendError, ScorerUnavailable) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (PolarGraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
