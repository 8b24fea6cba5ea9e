from __future__ import annotations

import random
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from polargraph.graph import PolarGraph  # noqa: E402
from polargraph.index import HybridEmbedding, VectorIndex  # noqa: E402
from polargraph.partition import Partition  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_graph(seed: int, n_visual: int = 12, n_text: int = 4, vocab_size: int = 10,
                 dim: int = 8) -> tuple[PolarGraph, VectorIndex, list[str]]:
    """Random graph with per-node random HAS / NOT_HAS / uncertain sets and embeddings."""
    r = random.Random(seed)
    rng = np.random.default_rng(seed)
    vocab = [f"c{i}" for i in range(vocab_size)]
    g = PolarGraph()
    idx = VectorIndex(dim)
    for i in range(n_visual):
        shuffled = r.sample(vocab, vocab_size)
        a, b, c = sorted(r.sample(range(vocab_size + 1), 3))
        part = Partition.from_sets(shuffled[:a], shuffled[a:b], shuffled[b:c])
        node = g.add_visual_episode(f"img/{i}.png", part, key=f"v{i:03d}")
        z = _unit(rng, dim)
        idx.add(node, HybridEmbedding(z, _unit(rng, dim)))
    for j in range(n_text):
        node = g.add_text_chunk(f"chunk {j}", r.sample(vocab, r.randint(0, 3)))
        z = _unit(rng, dim)
        idx.add(node, HybridEmbedding(z, z))
    return g, idx, vocab


@pytest.fixture
def golden():
    return GOLDEN
