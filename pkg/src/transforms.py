"""
Invertible non-uniform transforms applied before residual quantization.

Two learnable families map normalized embedding values in [0, 1] to an
approximately uniform space:

- Kumaraswamy CDF ``F(x) = 1 - (1 - x^a)^b`` with closed-form quantile.
- Scaled logistic / logit with slope ``alpha`` and midpoint ``x0``, rescaled so
  that the endpoints of each vector stay pinned at 0 and 1.

Positive parameters are stored as logarithms. Every family exposes analytic
partial derivatives for the training loop; normalization statistics are
treated as constants during differentiation.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import special

from src.config import Config
from src.embedding_store import VectorStats, denormalize_unit, normalize_unit, vector_stats
from src.exceptions import DomainError, MissingSideInfoError

logger = logging.getLogger(__name__)

Gradients = Dict[str, np.ndarray]


class TransformKind(str, Enum):
    """Available transform families; IDENTITY is plain residual quantization."""

    IDENTITY = "identity"
    KUMARASWAMY = "ks"
    SCALED_LOGISTIC = "logistic"


LEARNABLE = {
    TransformKind.IDENTITY: (),
    TransformKind.KUMARASWAMY: ("log_a", "log_b"),
    TransformKind.SCALED_LOGISTIC: ("log_alpha", "x0"),
}


@dataclass
class TransformParams:
    """
    Learnable parameters of a transform.

    Each parameter is a 0-d array (shared across dimensions) or a length-D
    array in per-dimension mode.
    """

    kind: TransformKind
    log_a: np.ndarray
    log_b: np.ndarray
    log_alpha: np.ndarray
    x0: np.ndarray
    clamp_eps: float = Config.CLAMP_EPS

    def __post_init__(self):
        self.kind = TransformKind(self.kind)
        for name in ("log_a", "log_b", "log_alpha", "x0"):
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        if not 0.0 < self.clamp_eps <= 0.01:
            raise DomainError(f"clamp_eps must lie in (0, 0.01], got {self.clamp_eps}")

    @classmethod
    def identity_start(
        cls,
        kind: Union[TransformKind, str],
        dim: Optional[int] = None,
        per_dimension: bool = False,
        clamp_eps: float = Config.CLAMP_EPS,
    ) -> "TransformParams":
        """
        Parameters at the plain-RQ starting point: a = b = alpha = 1, x0 = 0.5.

        Args:
            kind: Transform family
            dim: Embedding dimension, required in per-dimension mode
            per_dimension: One parameter set per dimension instead of shared scalars
            clamp_eps: Clamp margin of the logit inverse
        """
        shape = ()
        if per_dimension:
            if dim is None:
                raise DomainError("per-dimension transform parameters need a dimension")
            shape = (int(dim),)
        return cls(
            kind=kind,
            log_a=np.zeros(shape),
            log_b=np.zeros(shape),
            log_alpha=np.zeros(shape),
            x0=np.full(shape, 0.5),
            clamp_eps=clamp_eps,
        )

    @property
    def a(self) -> np.ndarray:
        return np.exp(self.log_a)

    @property
    def b(self) -> np.ndarray:
        return np.exp(self.log_b)

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(self.log_alpha)

    @property
    def learnable(self) -> Tuple[str, ...]:
        return LEARNABLE[self.kind]

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "log_a": self.log_a.tolist(),
            "log_b": self.log_b.tolist(),
            "log_alpha": self.log_alpha.tolist(),
            "x0": self.x0.tolist(),
            "clamp_eps": self.clamp_eps,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "TransformParams":
        return cls(
            kind=payload["kind"],
            log_a=payload["log_a"],
            log_b=payload["log_b"],
            log_alpha=payload["log_alpha"],
            x0=payload["x0"],
            clamp_eps=float(payload["clamp_eps"]),
        )


@dataclass
class TransformSideInfo:
    """Per-vector statistics carried from the forward pass to the inverse."""

    stats: VectorStats
    degenerate: Union[bool, np.ndarray]


def _check_unit_interval(values: np.ndarray, name: str) -> None:
    if np.isnan(values).any() or (values < 0.0).any() or (values > 1.0).any():
        raise DomainError(f"{name} must lie in [0, 1]")


def logistic(x, alpha, x0) -> np.ndarray:
    """Standard logistic ``1 / (1 + exp(-alpha (x - x0)))``."""
    return special.expit(np.asarray(alpha) * (np.asarray(x, dtype=np.float64) - x0))


def logit(y, alpha, x0) -> np.ndarray:
    """Standard logit ``log(y / (1 - y)) / alpha + x0`` on (0, 1)."""
    y = np.asarray(y, dtype=np.float64)
    return special.logit(y) / alpha + x0


def ks_cdf(x, a, b) -> np.ndarray:
    """
    Kumaraswamy CDF ``1 - (1 - x^a)^b`` on [0, 1].

    Evaluated as ``-expm1(b * log1p(-x^a))`` so that values near 0 keep their
    relative precision.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_unit_interval(x, "x")
    return _ks_cdf_unchecked(x, np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def ks_quantile(y, a, b) -> np.ndarray:
    """Kumaraswamy quantile ``(1 - (1 - y)^(1/b))^(1/a)``, the inverse of ks_cdf."""
    y = np.asarray(y, dtype=np.float64)
    _check_unit_interval(y, "y")
    return _ks_quantile_unchecked(y, np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def _ks_cdf_unchecked(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        log_w = np.log(-np.expm1(a * np.log(x)))
        return -np.expm1(b * log_w)


def _ks_quantile_unchecked(y: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -np.expm1(np.log1p(-y) / b)
        return np.exp(np.log(t) / a)


def _ks_forward_partials(u: np.ndarray, params: TransformParams) -> Tuple[np.ndarray, Gradients]:
    a, b = params.a, params.b
    interior = (u > 0.0) & (u < 1.0)
    uc = np.where(interior, u, 0.5)
    log_u = np.log(uc)
    u_a = np.exp(a * log_u)
    log_w = np.log(-np.expm1(a * log_u))
    d_log_a = a * b * np.exp((b - 1.0) * log_w) * u_a * log_u
    d_log_b = -b * np.exp(b * log_w) * log_w
    d_u = a * b * np.exp((a - 1.0) * log_u + (b - 1.0) * log_w)
    zero = np.zeros_like(u)
    return (
        np.where(interior, d_u, zero),
        {
            "log_a": np.where(interior, d_log_a, zero),
            "log_b": np.where(interior, d_log_b, zero),
        },
    )


def _ks_inverse_partials(y: np.ndarray, params: TransformParams) -> Tuple[np.ndarray, Gradients]:
    a, b = params.a, params.b
    eps = params.clamp_eps
    inside = (y > 0.0) & (y < 1.0)
    yj = np.clip(y, eps, 1.0 - eps)
    l1y = np.log1p(-yj)
    s = np.exp(l1y / b)
    t = -np.expm1(l1y / b)
    log_t = np.log(t)
    q = np.exp(log_t / a)
    d_log_a = -q * log_t / a
    d_log_b = q / t * s * l1y / (a * b)
    d_y = q / (a * t) * s / ((1.0 - yj) * b)
    return (
        np.where(inside, d_y, 0.0),
        {"log_a": np.where(inside, d_log_a, 0.0), "log_b": np.where(inside, d_log_b, 0.0)},
    )


def _logistic_unit(u: np.ndarray, alpha: np.ndarray, x0: np.ndarray) -> np.ndarray:
    s_u = special.expit(alpha * (u - x0))
    s_0 = special.expit(-alpha * x0)
    s_1 = special.expit(alpha * (1.0 - x0))
    return (s_u - s_0) / (s_1 - s_0)


def _logit_unit(y: np.ndarray, alpha: np.ndarray, x0: np.ndarray, clamp_eps: float) -> np.ndarray:
    s_0 = special.expit(-alpha * x0)
    s_1 = special.expit(alpha * (1.0 - x0))
    yc = np.clip(y, clamp_eps, 1.0 - clamp_eps)
    p = (s_1 - s_0) * yc + s_0
    return np.clip(logit(p, alpha, x0), 0.0, 1.0)


def _logistic_forward_partials(u: np.ndarray, params: TransformParams) -> Tuple[np.ndarray, Gradients]:
    alpha, x0 = params.alpha, params.x0
    s_u = special.expit(alpha * (u - x0))
    s_0 = special.expit(-alpha * x0)
    s_1 = special.expit(alpha * (1.0 - x0))
    delta = s_1 - s_0
    y = (s_u - s_0) / delta

    ds_u = s_u * (1.0 - s_u)
    ds_0 = s_0 * (1.0 - s_0)
    ds_1 = s_1 * (1.0 - s_1)

    d_alpha = (ds_u * (u - x0) - ds_0 * (-x0) - y * (ds_1 * (1.0 - x0) + ds_0 * x0)) / delta
    d_x0 = (-alpha * ds_u + alpha * ds_0 - y * (-alpha * ds_1 + alpha * ds_0)) / delta
    d_u = alpha * ds_u / delta
    pinned = (u <= 0.0) | (u >= 1.0)
    return (
        np.where(pinned, 0.0, d_u),
        {"log_alpha": np.where(pinned, 0.0, alpha * d_alpha), "x0": np.where(pinned, 0.0, d_x0)},
    )


def _logistic_inverse_partials(y: np.ndarray, params: TransformParams) -> Tuple[np.ndarray, Gradients]:
    alpha, x0 = params.alpha, params.x0
    eps = params.clamp_eps
    s_0 = special.expit(-alpha * x0)
    s_1 = special.expit(alpha * (1.0 - x0))
    delta = s_1 - s_0
    inside = (y > eps) & (y < 1.0 - eps)
    yc = np.clip(y, eps, 1.0 - eps)
    p = delta * yc + s_0
    dlogit = 1.0 / (alpha * p * (1.0 - p))

    ds_0_alpha = s_0 * (1.0 - s_0) * (-x0)
    ds_1_alpha = s_1 * (1.0 - s_1) * (1.0 - x0)
    ds_0_x0 = -alpha * s_0 * (1.0 - s_0)
    ds_1_x0 = -alpha * s_1 * (1.0 - s_1)

    dp_alpha = yc * (ds_1_alpha - ds_0_alpha) + ds_0_alpha
    dp_x0 = yc * (ds_1_x0 - ds_0_x0) + ds_0_x0
    raw_logit = special.logit(p)

    d_alpha = -raw_logit / alpha**2 + dp_alpha * dlogit
    d_x0 = 1.0 + dp_x0 * dlogit
    d_y = np.where(inside, delta * dlogit, 0.0)
    return d_y, {"log_alpha": alpha * d_alpha, "x0": d_x0}


def scaled_logistic(x, alpha, x0, stats: VectorStats) -> np.ndarray:
    """
    Logistic rescaled so that ``[x_min, x_max]`` maps onto ``[0, 1]``.

    The logistic acts on the normalized coordinate ``(x - x_min) / delta``, so
    alpha and x0 mean the same thing for every vector regardless of its range.
    Degenerate vectors (delta == 0) pass through as 0.5.
    """
    x = np.asarray(x, dtype=np.float64)
    u, degenerate = normalize_unit(x, stats)
    lo = np.asarray(stats.x_min)[..., None]
    hi = np.asarray(stats.x_max)[..., None]
    if ((x < lo) | (x > hi)).any():
        raise DomainError("scaled_logistic input lies outside [x_min, x_max]")
    y = _logistic_unit(u, np.asarray(alpha, dtype=np.float64), np.asarray(x0, dtype=np.float64))
    return np.where(np.asarray(degenerate)[..., None], u, y).reshape(u.shape)


def scaled_logit(y, alpha, x0, stats: VectorStats, clamp_eps: float = Config.CLAMP_EPS) -> np.ndarray:
    """
    Inverse of scaled_logistic, mapping ``[0, 1]`` back onto ``[x_min, x_max]``.

    ``y`` is clamped to ``[clamp_eps, 1 - clamp_eps]`` before the logit so the
    result stays finite; the endpoints therefore come back offset by a small,
    bounded margin.
    """
    y = np.asarray(y, dtype=np.float64)
    _check_unit_interval(y, "y")
    u = _logit_unit(y, np.asarray(alpha, dtype=np.float64), np.asarray(x0, dtype=np.float64), clamp_eps)
    return denormalize_unit(u, stats).reshape(u.shape)


def apply_unit(u: np.ndarray, params: TransformParams) -> np.ndarray:
    """Transform already-normalized values in [0, 1]."""
    if params.kind is TransformKind.KUMARASWAMY:
        return _ks_cdf_unchecked(u, params.a, params.b)
    if params.kind is TransformKind.SCALED_LOGISTIC:
        return _logistic_unit(u, params.alpha, params.x0)
    return u


def invert_unit(y: np.ndarray, params: TransformParams) -> np.ndarray:
    """Inverse transform into normalized coordinates; ``y`` is clamped to [0, 1] first."""
    y = np.clip(y, 0.0, 1.0)
    if params.kind is TransformKind.KUMARASWAMY:
        return _ks_quantile_unchecked(y, params.a, params.b)
    if params.kind is TransformKind.SCALED_LOGISTIC:
        return _logit_unit(y, params.alpha, params.x0, params.clamp_eps)
    return y


def forward_partials(u: np.ndarray, params: TransformParams) -> Tuple[np.ndarray, Gradients]:
    """
    Elementwise partials of the forward transform in normalized coordinates.

    Returns:
        (dT/du, {parameter name: dT/dparam}) with the shape of ``u``
    """
    if params.kind is TransformKind.KUMARASWAMY:
        return _ks_forward_partials(u, params)
    if params.kind is TransformKind.SCALED_LOGISTIC:
        return _logistic_forward_partials(u, params)
    pinned = (u <= 0.0) | (u >= 1.0)
    return np.where(pinned, 0.0, 1.0), {}


def inverse_partials(y: np.ndarray, params: TransformParams) -> Tuple[np.ndarray, Gradients]:
    """Elementwise partials of the inverse transform (result in normalized coordinates)."""
    y = np.clip(y, 0.0, 1.0)
    if params.kind is TransformKind.KUMARASWAMY:
        return _ks_inverse_partials(y, params)
    if params.kind is TransformKind.SCALED_LOGISTIC:
        return _logistic_inverse_partials(y, params)
    return np.ones_like(y), {}


def reduce_to_param(grad: np.ndarray, param: np.ndarray) -> np.ndarray:
    """Sum an elementwise gradient down to the shape of a shared or per-dimension parameter."""
    if param.ndim == 0:
        return np.asarray(grad.sum())
    return grad.reshape(-1, param.shape[-1]).sum(axis=0)


def side_info(h: np.ndarray, stats: Optional[VectorStats] = None) -> TransformSideInfo:
    """Per-vector statistics of ``h``, or the supplied corpus-global statistics."""
    if stats is None:
        stats = vector_stats(h)
    degenerate = np.asarray(stats.delta) <= 0.0
    if np.ndim(h) > 1 and degenerate.ndim == 0:
        degenerate = np.full(np.shape(h)[0], bool(degenerate))
    return TransformSideInfo(stats=stats, degenerate=degenerate)


def forward(
    h, params: TransformParams, stats: Optional[VectorStats] = None
) -> Tuple[np.ndarray, TransformSideInfo]:
    """
    Normalize each vector onto [0, 1], then apply the transform.

    Args:
        h: Vector or batch of vectors (rows)
        params: Transform parameters
        stats: Optional corpus-global statistics; per-vector by default

    Returns:
        (d, side) where side carries what the inverse needs
    """
    h = np.asarray(h, dtype=np.float64)
    side = side_info(h, stats)
    u, _ = normalize_unit(h, side.stats)
    d = apply_unit(u, params)
    d = np.where(np.asarray(side.degenerate)[..., None], u, d).reshape(u.shape)
    return d, side


def inverse(d_hat, side: Optional[TransformSideInfo], params: TransformParams) -> np.ndarray:
    """
    Inverse transform, then denormalize with the forward pass statistics.

    Raises:
        MissingSideInfoError: when ``side`` is None
    """
    if side is None:
        raise MissingSideInfoError("inverse transform needs the side info of the forward pass")
    d_hat = np.asarray(d_hat, dtype=np.float64)
    u = invert_unit(d_hat, params)
    return denormalize_unit(u, side.stats).reshape(u.shape)


def nuq_loss(h, params: TransformParams, stats: Optional[VectorStats] = None) -> float:
    """
    Consistency loss ``||T^-1(T(h)) - h||^2`` (mean over rows for a batch).

    Zero up to rounding for exact inverses; positive where the logit clamp bites.
    """
    if params.kind is TransformKind.IDENTITY:
        return 0.0
    h = np.asarray(h, dtype=np.float64)
    d, side = forward(h, params, stats)
    diff = inverse(d, side, params) - h
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def grad_params(h, upstream, params: TransformParams, stats: Optional[VectorStats] = None) -> Gradients:
    """
    Gradient of ``sum(upstream * T(h))`` with respect to the stored parameters.

    Normalization statistics are constants; identity transforms have no parameters.

    Args:
        h: Input vector or batch
        upstream: Gradient of the loss with respect to the forward output
        params: Transform parameters

    Returns:
        Mapping from parameter name (log_a, log_b, log_alpha or x0) to gradient
    """
    if params.kind is TransformKind.IDENTITY:
        return {}
    h = np.asarray(h, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    side = side_info(h, stats)
    u, _ = normalize_unit(h, side.stats)
    _, partials = forward_partials(u, params)
    live = ~np.asarray(side.degenerate)[..., None]
    return {
        name: reduce_to_param(np.where(live, upstream * partial, 0.0), getattr(params, name))
        for name, partial in partials.items()
    }
