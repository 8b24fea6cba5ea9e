import numpy as np
import pytest

from polargraph.clients.base import EpisodeRef
from polargraph.clients.synthetic import (
    EchoGenerator,
    SyntheticEncoder,
    SyntheticExtractor,
    SyntheticParser,
    SyntheticProposer,
    SyntheticScorer,
    SyntheticWorld,
)
from polargraph.engine import MemoryEngine
from polargraph.errors import BackendError, DuplicateEpisode, ScorerUnavailable
from polargraph.graph import EdgeKind
from polargraph.retrieval import Status


def make_engine(scorer=None, **kw):
    world = SyntheticWorld({"husky.png": frozenset({"husky", "snow", "sled"}),
                            "wolf.png": frozenset({"wolf", "snow"})},
                           decoys={"husky.png": ("wolf",), "wolf.png": ("husky", "sled")})
    return MemoryEngine(
        scorer=scorer or SyntheticScorer(world),
        proposer=SyntheticProposer(world),
        extractor=SyntheticExtractor({"Huskies pull sleds.": ["husky", "sled"]}),
        parser=SyntheticParser({"a husky, not a wolf": (["husky"], ["wolf"])}),
        encoder=SyntheticEncoder(16, 0),
        generator=EchoGenerator(),
        backoff=0.0,
        **kw,
    )


def test_end_to_end():
    e = make_engine()
    rec = e.ingest_episode(EpisodeRef("husky.png", "file:///husky.png"))
    assert rec.partition.positive == {"husky", "snow", "sled"} and rec.partition.negative == {"wolf"}
    e.ingest_episode(EpisodeRef("wolf.png"))
    t = e.ingest_text("Huskies pull sleds.")
    assert e.graph.linked(t, EdgeKind.ALIGN) == {"husky", "sled"}
    res = e.query("a husky, not a wolf")
    keys = [r.node.key for r in res.ranking]
    assert "wolf.png" not in keys
    assert res.evidence[0].status is Status.VERIFIED_PRESENT
    assert res.context[0] == e.system_instruction and res.context[-1] == "a husky, not a wolf"
    assert "file:///husky.png" in res.image_refs
    answer, _ = e.answer("a husky, not a wolf")
    assert answer == "\n".join(res.context)


def test_pipeline_bit_identical():
    def run():
        e = make_engine()
        e.ingest_episode(EpisodeRef("husky.png"))
        e.ingest_episode(EpisodeRef("wolf.png"))
        e.ingest_text("Huskies pull sleds.")
        return e.graph.dumps(), e.query("a husky, not a wolf").context

    assert run() == run()


def test_failed_episode_leaves_no_state():
    class Down:
        def binary_score(self, *a):
            raise BackendError("down")

    e = make_engine(scorer=Down(), retries=0)
    with pytest.raises(ScorerUnavailable):
        e.ingest_episode(EpisodeRef("husky.png"))
    assert not e.graph.visual and len(e.index) == 0


def test_duplicate_episode():
    e = make_engine()
    e.ingest_episode(EpisodeRef("husky.png"))
    with pytest.raises(DuplicateEpisode):
        e.ingest_episode(EpisodeRef("husky.png"))


def test_rebuild_index_matches_incremental():
    e = make_engine()
    e.ingest_episode(EpisodeRef("husky.png"))
    e.ingest_text("Huskies pull sleds.")
    before = {n: (e.index.get(n).z_vis.copy(), e.index.get(n).z_sem.copy()) for n in e.index.ids()}
    e.rebuild_index()
    for n, (vis, sem) in before.items():
        assert np.array_equal(e.index.get(n).z_vis, vis) and np.array_equal(e.index.get(n).z_sem, sem)


def test_answer_requires_generator():
    e = make_engine()
    e.generator = None
    e.ingest_episode(EpisodeRef("husky.png"))
    with pytest.raises(RuntimeError):
        e.answer("a husky, not a wolf")
