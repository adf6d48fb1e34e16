"""memdb: an embeddable temporal-semantic-relational memory engine.

Append-only, timestamp-keyed records with multi-view unit embeddings and
a labeled weighted multigraph, queried by time window, vector similarity,
graph expansion, and coherence-based re-ranking.
"""

from memdb.coherence import CoherenceConfig, CoherenceSample
from memdb.engine import Database, Draft, Namespace
from memdb.model import Edge, EmbeddingSet, MemoryRecord, Weight
from memdb.query import Expansion, Fusion, QuerySpec, RankedHit, RankingConfig

__version__ = "0.1.0"

__all__ = [
    "CoherenceConfig",
    "CoherenceSample",
    "Database",
    "Draft",
    "Edge",
    "EmbeddingSet",
    "Expansion",
    "Fusion",
    "MemoryRecord",
    "Namespace",
    "QuerySpec",
    "RankedHit",
    "RankingConfig",
    "Weight",
    "__version__",
]
