"""
Quantizer module tying the autoencoder, the non-uniform transform and the
residual codebooks into one trainable model.
Handles training, Semantic ID assignment, reconstruction and model persistence.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

from src.autoencoder import MlpParams, recon_loss
from src.codebook import (
    CodebookStack,
    RQAssignment,
    SemanticID,
    kmeans_init,
    restart_dead_codes,
    rq_assign_batch,
    rq_loss,
    squared_distances,
    update_codebooks,
)
from src.config import Config, TrainConfig
from src.diagnostics import level_perplexities, summarize_usage, usage_from_counts
from src.embedding_store import EmbeddingSet, VectorStats, corpus_stats, denormalize_unit, normalize_unit
from src.exceptions import DataError, DimensionMismatchError, NumericalError, VersionMismatchError
from src.optim import AdamW
from src.transforms import (
    TransformKind,
    TransformParams,
    TransformSideInfo,
    apply_unit,
    forward,
    forward_partials,
    inverse,
    inverse_partials,
    invert_unit,
    reduce_to_param,
    side_info,
)
from utils.helpers import chunk_ranges, format_level_list, read_json, write_json

logger = logging.getLogger(__name__)

# rows handed to one worker during bulk assignment
QUANTIZE_CHUNK = 4096


@dataclass
class QuantizerModel:
    """Everything needed to map an embedding to its Semantic ID and back."""

    stack: CodebookStack
    transform: TransformParams
    autoencoder: Optional[MlpParams]
    mu: float
    lambda_nuq: float
    config: TrainConfig
    global_stats: Optional[VectorStats] = None
    history: List[Dict[str, object]] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        if self.autoencoder is not None:
            return self.autoencoder.encoder.input_dim
        return self.stack.dim

    @property
    def levels(self) -> int:
        return self.stack.levels

    def to_dict(self) -> Dict[str, object]:
        stats = None
        if self.global_stats is not None:
            stats = {"x_min": float(self.global_stats.x_min), "x_max": float(self.global_stats.x_max)}
        return {
            "version": Config.MODEL_VERSION,
            "config": self.config.model_dump(mode="json"),
            "transform": self.transform.to_dict(),
            "stack": self.stack.to_dict(),
            "autoencoder": self.autoencoder.to_dict() if self.autoencoder is not None else None,
            "mu": self.mu,
            "lambda_nuq": self.lambda_nuq,
            "global_stats": stats,
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "QuantizerModel":
        version = payload.get("version")
        if version != Config.MODEL_VERSION:
            raise VersionMismatchError(f"model version {version!r} is not {Config.MODEL_VERSION!r}")
        stats = payload.get("global_stats")
        autoencoder = payload.get("autoencoder")
        return cls(
            stack=CodebookStack.from_dict(payload["stack"]),
            transform=TransformParams.from_dict(payload["transform"]),
            autoencoder=MlpParams.from_dict(autoencoder) if autoencoder is not None else None,
            mu=float(payload["mu"]),
            lambda_nuq=float(payload["lambda_nuq"]),
            config=TrainConfig.model_validate(payload["config"]),
            global_stats=VectorStats(x_min=stats["x_min"], x_max=stats["x_max"]) if stats else None,
            history=list(payload.get("history", [])),
        )


class ModelStore:
    """Reads and writes quantizer models as JSON."""

    @staticmethod
    def save_model(model: QuantizerModel, path: Union[str, Path]) -> None:
        write_json(model.to_dict(), path)
        logger.info("Saved model with %d levels to %s", model.levels, path)

    @staticmethod
    def load_model(path: Union[str, Path]) -> QuantizerModel:
        """
        Load a model file.

        Raises:
            DataError: when the file is missing, is not JSON or does not describe a model
            VersionMismatchError: when the model version is unsupported
        """
        try:
            payload = read_json(path)
        except FileNotFoundError as e:
            raise DataError(f"model file not found: {path}") from e
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise DataError(f"model file {path} is not valid JSON: {e}") from e
        if not isinstance(payload, dict):
            raise DataError(f"model file {path} does not hold a JSON object")
        try:
            return QuantizerModel.from_dict(payload)
        except VersionMismatchError:
            raise
        except (KeyError, TypeError, ValueError, ValidationError) as e:
            raise DataError(f"model file {path} is malformed: {e}") from e


@dataclass
class StepResult:
    loss: float
    recon: float
    rq: float
    nuq: float
    codes: np.ndarray


@dataclass
class StepGradients:
    result: StepResult
    transform: Dict[str, np.ndarray]
    encoder: Optional[Dict[str, List[np.ndarray]]]
    decoder: Optional[Dict[str, List[np.ndarray]]]
    assignment: RQAssignment


def _row_deltas(stats: VectorStats, rows: int) -> np.ndarray:
    return np.broadcast_to(np.maximum(np.asarray(stats.delta, dtype=np.float64), 0.0), (rows,))[:, None]


def _spawn_seeds(seed: int, count: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


class QuantizerTrainer:
    """Trains a QuantizerModel on one embedding set."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        mlp_seed, self.kmeans_seed, shuffle_seed, restart_seed = _spawn_seeds(cfg.seed, 4)
        self.mlp_seed = mlp_seed
        self.shuffle_rng = np.random.default_rng(shuffle_seed)
        self.restart_rng = np.random.default_rng(restart_seed)
        self.optimizer = AdamW(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)
        self.model: Optional[QuantizerModel] = None
        self.restarts = 0

    def _initialize(self, z: np.ndarray) -> QuantizerModel:
        cfg = self.cfg
        autoencoder = None
        h = z
        if cfg.use_autoencoder:
            autoencoder = MlpParams.initialize(z.shape[1], cfg.hidden_dims, cfg.latent_dim, self.mlp_seed)
            h, _ = autoencoder.encoder.forward(z)

        global_stats = corpus_stats(h) if cfg.normalization == "global" else None
        transform = TransformParams.identity_start(
            cfg.transform, dim=h.shape[1], per_dimension=cfg.per_dimension, clamp_eps=cfg.clamp_eps
        )
        d, _ = forward(h, transform, global_stats)

        books = []
        residual = d
        for level in range(cfg.levels):
            book = kmeans_init(residual, cfg.codebook_size, cfg.kmeans_iters, self.kmeans_seed + level, level)
            index = np.argmin(squared_distances(residual, book.vectors), axis=1)
            residual = residual - book.vectors[index]
            books.append(book)
        logger.debug("Initialized %d codebooks of %d codewords", cfg.levels, cfg.codebook_size)

        return QuantizerModel(
            stack=CodebookStack(books=books),
            transform=transform,
            autoencoder=autoencoder,
            mu=cfg.mu,
            lambda_nuq=cfg.lambda_nuq,
            config=cfg,
            global_stats=global_stats,
        )

    def _gradients(self, z: np.ndarray) -> StepGradients:
        """Loss terms and gradients of one batch; leaves the model untouched."""
        model, cfg = self.model, self.cfg
        params = model.transform
        rows = z.shape[0]
        learnable = params.kind is not TransformKind.IDENTITY

        enc_cache = None
        if model.autoencoder is not None:
            h, enc_cache = model.autoencoder.encoder.forward(z)
        else:
            h = z
        side = side_info(h, model.global_stats)
        u, _ = normalize_unit(h, side.stats)
        live = ~np.asarray(side.degenerate, dtype=bool)[:, None]
        d = np.where(live, apply_unit(u, params), u)
        delta = _row_deltas(side.stats, rows)

        assignment = rq_assign_batch(d, model.stack)
        rq_value, rq_grads = rq_loss(assignment.inputs, assignment.selected, model.mu)

        # decoding side: straight-through copy of d_hat
        d_hat = assignment.quantized
        h_hat = denormalize_unit(invert_unit(d_hat, params), side.stats)
        dec_cache = None
        if model.autoencoder is not None:
            z_hat, dec_cache = model.autoencoder.decoder.forward(h_hat)
        else:
            z_hat = h_hat
        recon_value = recon_loss(z, z_hat)

        grads: Dict[str, np.ndarray] = {name: np.zeros_like(getattr(params, name)) for name in params.learnable}
        g_h_hat = -2.0 * (z - z_hat) / rows
        dec_grads = None
        if model.autoencoder is not None:
            dec_grads, g_h_hat = model.autoencoder.decoder.backward(g_h_hat, dec_cache)

        g_h = np.zeros_like(h)
        g_d = rq_grads.inputs.copy()
        nuq_value = 0.0
        if cfg.nuq_variant == "quantized":
            diff = h_hat - h
            nuq_value = float(np.mean(np.sum(diff * diff, axis=1)))
            g_nuq = 2.0 * model.lambda_nuq * diff / rows
            g_h_hat = g_h_hat + g_nuq
            g_h -= g_nuq
        elif learnable:
            h_round = denormalize_unit(invert_unit(d, params), side.stats)
            diff = h_round - h
            nuq_value = float(np.mean(np.sum(diff * diff, axis=1)))
            g_nuq = 2.0 * model.lambda_nuq * diff / rows
            g_h -= g_nuq
            dq_dy, dq_dtheta = inverse_partials(d, params)
            g_u_round = g_nuq * delta
            for name, partial in dq_dtheta.items():
                grads[name] += reduce_to_param(g_u_round * partial, getattr(params, name))
            g_d += g_u_round * dq_dy

        g_u_hat = g_h_hat * delta
        dq_dy, dq_dtheta = inverse_partials(d_hat, params)
        for name, partial in dq_dtheta.items():
            grads[name] += reduce_to_param(g_u_hat * partial, getattr(params, name))
        g_d = np.where(live, g_d + g_u_hat * dq_dy, 0.0)

        df_du, df_dtheta = forward_partials(u, params)
        for name, partial in df_dtheta.items():
            grads[name] += reduce_to_param(np.where(live, g_d * partial, 0.0), getattr(params, name))

        loss = recon_value + rq_value + model.lambda_nuq * nuq_value
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite training loss {loss}")

        enc_grads = None
        if model.autoencoder is not None:
            safe_delta = np.where(delta > 0.0, delta, 1.0)
            g_h = g_h + np.where(live & (delta > 0.0), g_d * df_du / safe_delta, 0.0)
            enc_grads, _ = model.autoencoder.encoder.backward(g_h, enc_cache)

        for name in params.learnable:
            if not np.all(np.isfinite(grads[name])):
                raise NumericalError(f"non-finite gradient for transform parameter {name}")
        result = StepResult(loss=loss, recon=recon_value, rq=rq_value, nuq=nuq_value, codes=assignment.codes)
        return StepGradients(result=result, transform=grads, encoder=enc_grads, decoder=dec_grads, assignment=assignment)

    def _train_step(self, z: np.ndarray) -> StepResult:
        model, cfg = self.model, self.cfg
        params = model.transform
        step = self._gradients(z)
        if model.autoencoder is not None:
            self._step_autoencoder(step.encoder, step.decoder)
        for name in params.learnable:
            self.optimizer.step(f"transform.{name}", getattr(params, name), step.transform[name])
        if params.kind is TransformKind.SCALED_LOGISTIC:
            np.clip(params.x0, 0.0, 1.0, out=params.x0)

        update_codebooks(
            model.stack,
            step.assignment,
            rule=cfg.update_rule,
            learning_rate=cfg.learning_rate,
            ema_decay=cfg.ema_decay,
            optimizer=self.optimizer if cfg.update_rule == "gradient" else None,
        )
        return step.result

    def _step_autoencoder(self, enc_grads, dec_grads) -> None:
        by_part = {"encoder": enc_grads, "decoder": dec_grads}
        for name, array, decay in self.model.autoencoder.named_parameters():
            _, part, slot = name.split(".")
            kind = "weights" if slot[0] == "w" else "biases"
            grad = by_part[part][kind][int(slot[1:])]
            self.optimizer.step(name, array, grad, decay=decay)

    def _restart(self, window: List[np.ndarray], z: np.ndarray) -> int:
        model = self.model
        h = encode_latent(z, model)
        d, _ = forward(h, model.transform, model.global_stats)
        assignment = rq_assign_batch(d, model.stack)
        total = 0
        for level, book in enumerate(model.stack.books):
            usage = usage_from_counts(window[level], level)
            total += restart_dead_codes(book, usage, assignment.inputs[level], self.restart_rng)
        return total

    def fit(self, data: EmbeddingSet) -> QuantizerModel:
        """
        Train a model on ``data``.

        Raises:
            DataError: when there are fewer vectors than codewords per level
            NumericalError: when the loss or a gradient becomes non-finite
        """
        cfg = self.cfg
        if data.count < cfg.codebook_size:
            raise DataError(f"training needs at least {cfg.codebook_size} vectors, got {data.count}")
        z = data.as_float64()
        self.model = self._initialize(z)
        window = [np.zeros(size, dtype=np.int64) for size in self.model.stack.sizes]
        step = 0
        previous = None
        warned = False

        for epoch in tqdm(range(1, cfg.epochs + 1), desc="epochs", disable=not cfg.show_progress):
            order = self.shuffle_rng.permutation(data.count)
            totals = np.zeros(4)
            epoch_codes = []
            epoch_restarts = 0
            for rows in chunk_ranges(data.count, cfg.batch_size):
                batch = z[order[rows.start:rows.stop]]
                result = self._train_step(batch)
                weight = len(rows)
                totals += weight * np.array([result.loss, result.recon, result.rq, result.nuq])
                epoch_codes.append(result.codes)
                for level in range(self.model.levels):
                    window[level] += np.bincount(result.codes[:, level], minlength=len(window[level]))
                step += 1
                if step % cfg.dead_restart_interval == 0:
                    epoch_restarts += self._restart(window, batch)
                    window = [np.zeros_like(counts) for counts in window]

            loss, recon, rq, nuq = (totals / data.count).tolist()
            usage = summarize_usage(np.vstack(epoch_codes), self.model.stack.sizes)
            perplexities = level_perplexities(usage)
            self.restarts += epoch_restarts
            self.model.history.append(
                {
                    "epoch": epoch,
                    "loss": loss,
                    "recon": recon,
                    "rq": rq,
                    "nuq": nuq,
                    "perplexity": perplexities,
                    "restarts": epoch_restarts,
                }
            )
            logger.info(
                "epoch %d/%d loss=%.6f recon=%.6f rq=%.6f nuq=%.6f perplexity=%s",
                epoch, cfg.epochs, loss, recon, rq, nuq, format_level_list(perplexities, 1),
            )
            if (
                not warned
                and previous is not None
                and epoch <= Config.MONOTONE_CHECK_EPOCHS
                and loss > previous
            ):
                logger.warning("training loss rose from %.6f to %.6f at epoch %d", previous, loss, epoch)
                warned = True
            previous = loss

        return self.model


def train(data: EmbeddingSet, cfg: Optional[TrainConfig] = None) -> QuantizerModel:
    """Train a quantizer model; deterministic for a fixed ``cfg.seed``."""
    cfg = cfg or TrainConfig()
    logger.info(
        "Training %s quantizer: %d levels x %d codes, autoencoder=%s, %d vectors",
        cfg.transform, cfg.levels, cfg.codebook_size, cfg.use_autoencoder, data.count,
    )
    return QuantizerTrainer(cfg).fit(data)


def _check_input_dim(z: np.ndarray, model: QuantizerModel) -> None:
    if z.ndim != 2 or z.shape[1] != model.input_dim:
        raise DimensionMismatchError(f"embeddings of dimension {z.shape[-1]} do not fit a model of dimension {model.input_dim}")


def encode_latent(z: np.ndarray, model: QuantizerModel) -> np.ndarray:
    """Latent vectors h: the encoder output, or the embeddings themselves without an autoencoder."""
    z = np.asarray(z, dtype=np.float64)
    _check_input_dim(z, model)
    if model.autoencoder is None:
        return z
    h, _ = model.autoencoder.encoder.forward(z)
    return h


def transformed(data: Union[EmbeddingSet, np.ndarray], model: QuantizerModel) -> Tuple[np.ndarray, TransformSideInfo]:
    """Vectors in the transformed space the codebooks live in, with their side info."""
    z = data.as_float64() if isinstance(data, EmbeddingSet) else np.asarray(data, dtype=np.float64)
    h = encode_latent(z, model)
    return forward(h, model.transform, model.global_stats)


def assign_codes(d: np.ndarray, stack: CodebookStack, threads: int = 1) -> np.ndarray:
    """(items, K) code matrix; chunks run on a thread pool when ``threads`` > 1."""
    chunks = chunk_ranges(d.shape[0], QUANTIZE_CHUNK)

    def work(rows: range) -> np.ndarray:
        return rq_assign_batch(d[rows.start:rows.stop], stack).codes

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(rows) for rows in chunks]
    return np.vstack(parts)


def quantize_set(
    data: EmbeddingSet, model: QuantizerModel, dedup: bool = False, threads: int = 1
) -> List[Tuple[str, SemanticID]]:
    """
    Assign a Semantic ID to every item.

    With ``dedup`` every item gets a suffix; items sharing a code tuple are
    numbered 0, 1, 2, ... in input order.

    Returns:
        (item id, SemanticID) pairs in input order
    """
    d, _ = transformed(data, model)
    codes = assign_codes(d, model.stack, threads)
    seen: Dict[Tuple[int, ...], int] = {}
    results = []
    for item_id, row in zip(data.ids, codes):
        key = tuple(int(code) for code in row)
        suffix = None
        if dedup:
            suffix = seen.get(key, 0)
            seen[key] = suffix + 1
        results.append((item_id, SemanticID(codes=key, dedup_suffix=suffix)))
    logger.info("Quantized %d items into %d distinct code tuples", len(results), len({sid.codes for _, sid in results}))
    return results


def decode_codes(codes: np.ndarray, model: QuantizerModel, side: Optional[TransformSideInfo]) -> np.ndarray:
    """
    Map code tuples back to embedding space.

    Args:
        codes: (items, K) code matrix
        model: Trained model
        side: Side info of the forward pass of the same items

    Raises:
        MissingSideInfoError: when ``side`` is None
        DimensionMismatchError: when the code shape or range does not fit the
            model, or per-vector side info covers a different number of rows
    """
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    if codes.shape[1] != model.levels:
        raise DimensionMismatchError(f"codes have {codes.shape[1]} levels, model has {model.levels}")
    if side is not None and np.ndim(side.stats.x_min) == 1 and len(side.stats.x_min) != codes.shape[0]:
        raise DimensionMismatchError(
            f"side info covers {len(side.stats.x_min)} rows, codes have {codes.shape[0]}"
        )
    d_hat = np.zeros((codes.shape[0], model.stack.dim))
    for level, book in enumerate(model.stack.books):
        if codes[:, level].min() < 0 or codes[:, level].max() >= book.size:
            raise DimensionMismatchError(f"codes at level {level} fall outside [0, {book.size})")
        d_hat += book.vectors[codes[:, level]]
    h_hat = inverse(d_hat, side, model.transform)
    if model.autoencoder is None:
        return h_hat
    z_hat, _ = model.autoencoder.decoder.forward(h_hat)
    return z_hat


def reconstruct(data: EmbeddingSet, model: QuantizerModel, threads: int = 1) -> np.ndarray:
    """Quantize then decode every item; returns the reconstructed embeddings."""
    d, side = transformed(data, model)
    codes = assign_codes(d, model.stack, threads)
    return decode_codes(codes, model, side)


def reconstruction_error(data: EmbeddingSet, model: QuantizerModel, threads: int = 1) -> float:
    """Mean squared reconstruction error per item."""
    return recon_loss(data.as_float64(), reconstruct(data, model, threads))
