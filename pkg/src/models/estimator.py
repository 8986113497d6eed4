"""Soft-correspondence scene-flow estimator with a learned metric.

For each first-frame point p the candidate_k nearest second-frame points q_j are
gathered; with offsets o_j = q_j - p and z_j = o_j·E the weights are
w_j = softmax_j(-||z_j||^2 / tau) and the flow is sum_j w_j o_j. E (3 x d) and
log(tau) are learned; gradients are derived by hand.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.geometry.core import FlowField, KnnIndex, PointCloud
from src.utils.config import EstimatorConfig, OptimizerConfig
from src.utils.error_handler import ConfigurationError, EmptyCloud, NonFiniteLoss, ShapeMismatch
from src.utils.validators import as_points, readonly, require_same_length


@dataclass(frozen=True)
class EstimatorParams:
    """Learnable weights (embedding, log_temperature) plus the fixed candidate count"""
    embedding: np.ndarray
    log_temperature: float
    candidate_k: int

    def __post_init__(self):
        embedding = np.asarray(self.embedding, dtype=np.float64)
        if embedding.ndim != 2 or embedding.shape[0] != 3:
            raise ShapeMismatch(f"embedding must be 3 x d, got {embedding.shape}")
        if not np.all(np.isfinite(embedding)) or not np.isfinite(self.log_temperature):
            raise NonFiniteLoss("Estimator parameters are not finite")
        if self.candidate_k < 1:
            raise ShapeMismatch(f"candidate_k must be >= 1, got {self.candidate_k}")
        object.__setattr__(self, "embedding", readonly(embedding.copy()))
        object.__setattr__(self, "log_temperature", float(self.log_temperature))
        object.__setattr__(self, "candidate_k", int(self.candidate_k))

    @property
    def embedding_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature))

    @classmethod
    def initial(cls, cfg: EstimatorConfig = None) -> "EstimatorParams":
        """Scaled identity then zero columns: the untrained metric is Euclidean"""
        cfg = cfg or EstimatorConfig()
        embedding = np.zeros((3, cfg.embedding_dim))
        embedding[:, :3] = cfg.init_scale * np.eye(3)
        return cls(embedding, float(np.log(cfg.init_temperature)), cfg.candidate_k)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.embedding.reshape(-1), [self.log_temperature]])

    def from_vector(self, vector: np.ndarray) -> "EstimatorParams":
        vector = np.asarray(vector, dtype=np.float64)
        size = self.embedding.size
        if vector.shape != (size + 1,):
            raise ShapeMismatch(f"Expected {size + 1} parameters, got {vector.shape}")
        return EstimatorParams(vector[:size].reshape(self.embedding.shape), vector[size], self.candidate_k)

    def check_compatible(self, other: "EstimatorParams"):
        if self.embedding.shape != other.embedding.shape or self.candidate_k != other.candidate_k:
            raise ShapeMismatch(
                f"Incompatible parameters: {self.embedding.shape}/k={self.candidate_k} "
                f"vs {other.embedding.shape}/k={other.candidate_k}"
            )

    def equals(self, other: "EstimatorParams") -> bool:
        return (self.candidate_k == other.candidate_k
                and np.array_equal(self.embedding, other.embedding)
                and self.log_temperature == other.log_temperature)


@dataclass(frozen=True)
class Gradients:
    """d loss / d params, same layout as EstimatorParams"""
    embedding: np.ndarray
    log_temperature: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.embedding.reshape(-1), [self.log_temperature]])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_vector()))

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(self.embedding + other.embedding, self.log_temperature + other.log_temperature)

    @classmethod
    def zeros_like(cls, params: EstimatorParams) -> "Gradients":
        return cls(np.zeros_like(params.embedding), 0.0)


@dataclass(frozen=True)
class _Forward:
    offsets: np.ndarray  # (n, k, 3)
    projected: np.ndarray  # (n, k, d)
    scores: np.ndarray  # (n, k)
    weights: np.ndarray  # (n, k)
    flow: np.ndarray  # (n, 3)


def _candidates(first: PointCloud, second: PointCloud, k: int) -> np.ndarray:
    if len(first) == 0 or len(second) == 0:
        raise EmptyCloud("Flow prediction needs two non-empty frames")
    index = KnnIndex(second)
    neighbors, _ = index.query_many(first.points, k)
    return second.points[neighbors] - first.points[:, None, :]


def _forward(params: EstimatorParams, first: PointCloud, second: PointCloud) -> _Forward:
    offsets = _candidates(first, second, params.candidate_k)
    projected = offsets @ params.embedding
    scores = -np.sum(projected * projected, axis=2) * np.exp(-params.log_temperature)
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp_scores = np.exp(shifted)
    weights = exp_scores / exp_scores.sum(axis=1, keepdims=True)
    flow = np.einsum("nk,nkc->nc", weights, offsets)
    return _Forward(offsets, projected, scores, weights, flow)


def predict_flow(params: EstimatorParams, first: PointCloud, second: PointCloud) -> FlowField:
    """Soft-correspondence flow for every first-frame point"""
    forward = _forward(params, first, second)
    if not np.all(np.isfinite(forward.flow)):
        raise NonFiniteLoss("Predicted flow is not finite", {"temperature": params.temperature})
    return FlowField(forward.flow)


def loss_and_gradients(params: EstimatorParams, first: PointCloud, second: PointCloud,
                       target_points, loss_kind: str = "L1") -> Tuple[float, Gradients]:
    """Mean over points of ||(p + flow) - target||_1 and its exact gradient"""
    if loss_kind != "L1":
        raise ConfigurationError(f"Unsupported loss kind: {loss_kind}")
    target_points = as_points(target_points, "target_points")
    require_same_length(first.points, target_points, names=("first", "target_points"))

    with np.errstate(over="ignore", invalid="ignore"):
        forward = _forward(params, first, second)
        n = first.points.shape[0]
        residual = first.points + forward.flow - target_points
        loss = float(np.abs(residual).sum() / n)

        # dL/dflow_i, then through the softmax: dL/ds_ij = w_ij * g_i·(o_ij - flow_i)
        grad_flow = np.sign(residual) / n
        centered = forward.offsets - forward.flow[:, None, :]
        grad_scores = forward.weights * np.einsum("nc,nkc->nk", grad_flow, centered)

        # s = -exp(-lambda) ||oE||^2: ds/dlambda = -s, ds/dE = -2 exp(-lambda) o^T (oE)
        grad_log_temperature = float(-np.sum(grad_scores * forward.scores))
        grad_embedding = -2.0 * np.exp(-params.log_temperature) * np.einsum(
            "nk,nka,nkd->ad", grad_scores, forward.offsets, forward.projected
        )

    if not np.isfinite(loss) or not np.isfinite(grad_log_temperature) or not np.all(np.isfinite(grad_embedding)):
        raise NonFiniteLoss(
            "Loss or gradients overflowed",
            {"loss": loss, "temperature": params.temperature, "points": int(first.points.shape[0])},
        )
    return loss, Gradients(grad_embedding, grad_log_temperature)


def nn_baseline_flow(first: PointCloud, second: PointCloud) -> FlowField:
    """Flow to the nearest second-frame point"""
    if len(second) == 0:
        raise EmptyCloud("Nearest-neighbor baseline needs a non-empty second frame")
    if len(first) == 0:
        return FlowField.zeros(0)
    index = KnnIndex(second)
    neighbors, _ = index.query_many(first.points, 1)
    return FlowField(second.points[neighbors[:, 0]] - first.points)


def sgd_step(params: EstimatorParams, grads: Gradients, cfg: OptimizerConfig = None) -> EstimatorParams:
    """Plain SGD with global gradient-norm clipping"""
    cfg = cfg or OptimizerConfig()
    vector = grads.as_vector()
    norm = float(np.linalg.norm(vector))
    if norm > cfg.grad_clip:
        vector = vector * (cfg.grad_clip / norm)
    return params.from_vector(params.as_vector() - cfg.learning_rate * vector)
