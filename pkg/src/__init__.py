"""
Source package for nuquant.
Contains the non-uniform residual quantizer, its diagnostics and the CLI.
"""

__version__ = "0.1.0"

from .config import Config, SyntheticSpec, TrainConfig
from .exceptions import ConfigError, DataError, DomainError, NuquantError, NumericalError
from .embedding_store import EmbeddingSet, EmbeddingStore, SyntheticFactory
from .transforms import TransformKind, TransformParams
from .codebook import Codebook, CodebookStack, SemanticID
from .quantizer import ModelStore, QuantizerModel, decode_codes, quantize_set, train
from .neighbors import NeighborIndex, NeighborTable, build_neighbor_table, top_k_neighbors

__all__ = [
    '__version__',
    'Config',
    'SyntheticSpec',
    'TrainConfig',
    'NuquantError',
    'ConfigError',
    'DataError',
    'DomainError',
    'NumericalError',
    'EmbeddingSet',
    'EmbeddingStore',
    'SyntheticFactory',
    'TransformKind',
    'TransformParams',
    'Codebook',
    'CodebookStack',
    'SemanticID',
    'ModelStore',
    'QuantizerModel',
    'decode_codes',
    'quantize_set',
    'train',
    'NeighborIndex',
    'NeighborTable',
    'build_neighbor_table',
    'top_k_neighbors'
]
