"""
Configuration module for the nuquant quantization toolkit.
Contains environment variables, defaults, and the validated run configurations.
"""

import os
from typing import Any, Dict, Literal, Optional, Tuple, Type, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.exceptions import ConfigError

# Load environment variables
load_dotenv()


def _env_int(name: str) -> Optional[int]:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw)
    except ValueError:
        return None


def env_seed() -> Optional[int]:
    """NUQUANT_SEED, read at call time."""
    return _env_int("NUQUANT_SEED")


class Config:
    """Application configuration class."""

    # Environment
    LOG_LEVEL = os.getenv("NUQUANT_LOG_LEVEL", "INFO").upper()
    LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Quantizer defaults (K codebooks of N codewords, latent dimension d)
    LEVELS = 4
    CODEBOOK_SIZE = 256
    LATENT_DIM = 32
    HIDDEN_DIMS = (512, 256)

    # Optimization settings
    EPOCHS = 20
    BATCH_SIZE = 1024
    LEARNING_RATE = 1e-3
    WEIGHT_DECAY = 0.01
    MU = 0.25
    LAMBDA_NUQ = 0.5
    EMA_DECAY = 0.99
    KMEANS_ITERS = 25
    DEAD_RESTART_INTERVAL = 50
    MONOTONE_CHECK_EPOCHS = 5

    # Transform settings
    CLAMP_EPS = 1e-6

    # Diagnostics
    MIN_EFFECTIVE_COUNT = 5
    PCA_TOL = 1e-9
    PCA_MAX_ITER = 1000
    DENSITY_BINS = 50

    # Neighbor selection
    NEIGHBORS_K = 3

    # File formats
    MAGIC = b"NUQ1"
    FORMAT_VERSION = 1
    IDS_SUFFIX = ".ids.jsonl"
    MANIFEST_SUFFIX = ".manifest.json"
    MODEL_VERSION = "nuq-model/1"

    # Synthetic data defaults
    SYNTH_CLUSTERS = 5
    SYNTH_DENSE_MASS = 0.8
    SYNTH_CLUSTER_SPREAD = 0.05
    SYNTH_TAIL_SPREAD = 1.0
    SYNTH_DIM = 32
    SYNTH_ITEMS = 10000


TransformName = Literal["identity", "ks", "logistic"]

SettingsT = TypeVar("SettingsT", bound="RunSettings")


class RunSettings(BaseModel):
    """
    Base of the validated run configurations.

    Direct construction raises pydantic's ValidationError; ``from_dict`` is the
    entry point for user-supplied values and reports failures as ConfigError.
    """

    @classmethod
    def from_dict(cls: Type[SettingsT], values: Dict[str, Any]) -> SettingsT:
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            raise ConfigError(f"invalid {cls.__name__}: {e}") from e


class SyntheticSpec(RunSettings):
    """Parameters of the skewed synthetic embedding generator."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_dense_clusters: int = Field(Config.SYNTH_CLUSTERS, ge=1)
    dense_mass: float = Field(Config.SYNTH_DENSE_MASS, ge=0.0, le=1.0)
    cluster_spread: float = Field(Config.SYNTH_CLUSTER_SPREAD, gt=0.0)
    tail_spread: float = Field(Config.SYNTH_TAIL_SPREAD, gt=0.0)
    dim: int = Field(Config.SYNTH_DIM, ge=1)
    n_items: int = Field(Config.SYNTH_ITEMS, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)


class TrainConfig(RunSettings):
    """
    Training configuration for a quantizer model.

    Defaults follow the reference setup: 4 codebooks of 256 codewords in a
    32-dimensional latent space, learning rate 1e-3, batch size 1024.
    """

    model_config = ConfigDict(extra="forbid")

    levels: int = Field(Config.LEVELS, ge=1)
    codebook_size: int = Field(Config.CODEBOOK_SIZE, ge=2)
    latent_dim: int = Field(Config.LATENT_DIM, ge=1)
    hidden_dims: Tuple[int, int] = Config.HIDDEN_DIMS
    epochs: int = Field(Config.EPOCHS, ge=1)
    batch_size: int = Field(Config.BATCH_SIZE, ge=1)
    learning_rate: float = Field(Config.LEARNING_RATE, gt=0.0)
    weight_decay: float = Field(Config.WEIGHT_DECAY, ge=0.0)
    mu: float = Field(Config.MU, gt=0.0)
    lambda_nuq: float = Field(Config.LAMBDA_NUQ, ge=0.1, le=1.0)
    update_rule: Literal["gradient", "ema"] = "gradient"
    ema_decay: float = Field(Config.EMA_DECAY, gt=0.0, lt=1.0)
    seed: int = Field(0, ge=0, lt=2**64)
    transform: TransformName = "identity"
    use_autoencoder: bool = False
    dead_restart_interval: int = Field(Config.DEAD_RESTART_INTERVAL, ge=1)
    kmeans_iters: int = Field(Config.KMEANS_ITERS, ge=0)
    clamp_eps: float = Field(Config.CLAMP_EPS, gt=0.0, le=0.01)
    per_dimension: bool = False
    normalization: Literal["per_vector", "global"] = "per_vector"
    nuq_variant: Literal["roundtrip", "quantized"] = "roundtrip"
    threads: int = Field(1, ge=1)
    show_progress: bool = False

    @field_validator("hidden_dims")
    @classmethod
    def _positive_widths(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if any(width < 1 for width in value):
            raise ValueError("hidden_dims must be positive")
        return value
