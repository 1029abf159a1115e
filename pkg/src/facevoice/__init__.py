"""Face-to-voice embedding adapter and the DCTS identity-consistency metric."""

from .dcts import DCTSScorer, DctsConfig, DctsReport, combine_dcts, evaluate_dcts
from .density import estimate_independence, gaussian_total_correlation, mmd_squared
from .embedding import EmbeddingSet, PCAProjection, RandomSource
from .io import read_embeddings, write_embeddings
from .synthdata import SynthConfig, clustered_embeddings, generate

__version__ = "0.1.0"

__all__ = [
    "DCTSScorer",
    "DctsConfig",
    "DctsReport",
    "EmbeddingSet",
    "PCAProjection",
    "RandomSource",
    "SynthConfig",
    "clustered_embeddings",
    "combine_dcts",
    "estimate_independence",
    "evaluate_dcts",
    "gaussian_total_correlation",
    "generate",
    "mmd_squared",
    "read_embeddings",
    "write_embeddings",
]
