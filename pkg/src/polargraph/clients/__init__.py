"""Boundary to external model services.

``base`` holds the protocols, ``synthetic`` the deterministic test doubles,
``http`` the OpenAI-compatible backend and ``ops`` the reply parsers.
"""

from .base import (
    AdmissionGate,
    BinaryScorer,
    ClientConfig,
    ConceptParser,
    ConceptProposer,
    Encoder,
    EntityExtractor,
    EpisodeRef,
    Generator,
    TokenCounter,
    WhitespaceTokenCounter,
)
from .synthetic import (
    EchoGenerator,
    ScriptedGenerator,
    SyntheticEncoder,
    SyntheticExtractor,
    SyntheticParser,
    SyntheticProposer,
    SyntheticScorer,
    SyntheticWorld,
)
