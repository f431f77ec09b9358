"""
Ablation runner comparing transform families on the same embeddings.
Trains one model per (transform, autoencoder) variant and tabulates codeword usage.
"""

import logging
from typing import Dict, Iterable, List, Tuple

import pandas as pd

from src.config import TrainConfig
from src.diagnostics import codes_matrix, collision_stats, summarize_usage
from src.embedding_store import EmbeddingSet
from src.quantizer import quantize_set, reconstruction_error, train

logger = logging.getLogger(__name__)

DEFAULT_TRANSFORMS = ("identity", "ks", "logistic")


def variant_name(transform: str, use_autoencoder: bool) -> str:
    return f"{transform}/{'rq-vae' if use_autoencoder else 'r-vq'}"


def run_ablation(
    data: EmbeddingSet,
    base: TrainConfig,
    transforms: Iterable[str] = DEFAULT_TRANSFORMS,
    autoencoder_modes: Iterable[bool] = (False,),
) -> Tuple[pd.DataFrame, Dict[str, object]]:
    """
    Train and evaluate every variant with otherwise identical settings.

    Args:
        data: Training embeddings (also used for evaluation)
        base: Shared configuration; transform and use_autoencoder are overridden
        transforms: Transform families to compare
        autoencoder_modes: False for plain residual quantization, True for the autoencoder path

    Returns:
        (per-level table, JSON-ready summary)
    """
    rows: List[Dict[str, object]] = []
    summary: Dict[str, object] = {"variants": {}}
    for use_autoencoder in autoencoder_modes:
        for transform in transforms:
            name = variant_name(transform, use_autoencoder)
            cfg = base.model_copy(update={"transform": transform, "use_autoencoder": use_autoencoder})
            logger.info("Ablation variant %s", name)
            model = train(data, cfg)
            sids = [sid for _, sid in quantize_set(data, model, threads=cfg.threads)]
            usage = summarize_usage(codes_matrix(sids), model.stack.sizes)
            recon = reconstruction_error(data, model, threads=cfg.threads)
            collisions = collision_stats(sids)
            for stats in usage:
                rows.append(
                    {
                        "variant": name,
                        "transform": transform,
                        "autoencoder": use_autoencoder,
                        "level": stats.level,
                        "perplexity": stats.perplexity,
                        "utilization": stats.utilization,
                        "effective_utilization": stats.effective_utilization,
                        "recon_mse": recon,
                    }
                )
            summary["variants"][name] = {
                "level1_perplexity": usage[0].perplexity,
                "level1_utilization": usage[0].utilization,
                "recon_mse": recon,
                "final_loss": model.history[-1]["loss"] if model.history else None,
                "n_distinct": collisions.n_distinct,
            }

    table = pd.DataFrame(rows)
    variants = summary["variants"]
    summary["best_level1_perplexity"] = max(variants, key=lambda key: variants[key]["level1_perplexity"])
    return table, summary
