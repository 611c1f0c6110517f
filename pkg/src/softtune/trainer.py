"""Linear adapter training against hard or soft similarity targets.

The trainable model is a single weight matrix W applied to frozen base
embeddings: f(x) = xW, L2-normalized by default so predicted similarities
share the [-1, 1] range of cosine-derived targets. The objective is the
mean squared error between f(q). f(p) and the target, so swapping hard
labels for any of the soft targets changes nothing but the numbers fed in.

Weights are held in float64 while training; checkpoints are written
through the float32 matrix format with rows keyed ``w_<row_index>``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EmbeddingMatrix, load_matrix, save_matrix
from .experts import LabeledPair

TARGET_KINDS = ("hard", "soft1", "soft2", "soft3")
OPTIMIZERS = ("sgd", "adam")

INIT_NOISE_SCALE = 0.01

# Stream tags for seed derivation: init and shuffling draw from distinct
# streams so an untrained adapter matches the one train() starts from.
_INIT_STREAM = 0
_SHUFFLE_STREAM = 1

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


class CollapsedEmbeddingError(ValueError):
    pass


class DivergedError(ValueError):
    pass


@dataclass
class AdapterModel:
    weights: np.ndarray  # (d_in, d_out), float64
    normalize_output: bool = True
    base_model_id: str = ""

    @property
    def d_in(self) -> int:
        return self.weights.shape[0]

    @property
    def d_out(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    target_kind: str
    seed: int
    learning_rate: float = 3e-5
    batch_size: int = 64
    epochs: int = 2
    optimizer: str = "adam"
    normalize_output: bool = True

    def __post_init__(self):
        if self.target_kind not in TARGET_KINDS:
            raise ValueError(f"unknown target_kind {self.target_kind!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        # learning_rate 0 is allowed as an explicit null update.
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def as_dict(self) -> dict:
        return {
            "target_kind": self.target_kind,
            "seed": self.seed,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "optimizer": self.optimizer,
            "normalize_output": self.normalize_output,
        }


@dataclass
class TrainReport:
    epoch_losses: list[float]
    initial_loss: float
    final_loss: float
    steps: int
    wall_time_s: float
    config: TrainConfig


def initial_adapter(
    d_in: int,
    d_out: int | None = None,
    seed: int = 0,
    normalize_output: bool = True,
    base_model_id: str = "",
) -> AdapterModel:
    """Identity (truncated if rectangular) plus seeded Gaussian noise."""
    d_out = d_in if d_out is None else d_out
    rng = np.random.default_rng([seed, _INIT_STREAM])
    weights = np.eye(d_in, d_out) + INIT_NOISE_SCALE * rng.standard_normal((d_in, d_out))
    return AdapterModel(weights=weights, normalize_output=normalize_output,
                        base_model_id=base_model_id)


def _project(model: AdapterModel, x: np.ndarray) -> np.ndarray:
    """Apply f to rows of x, normalizing when the model says so."""
    projected = x @ model.weights
    if not model.normalize_output:
        return projected
    norms = np.sqrt(np.einsum("ij,ij->i", projected, projected))
    if np.any(norms == 0.0):
        raise CollapsedEmbeddingError("collapsed embedding: zero-norm projected vector")
    return projected / norms[:, None]


def _batch_arrays(
    batch: Sequence[tuple[np.ndarray, np.ndarray, float]], d_in: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q = np.asarray([item[0] for item in batch], dtype=np.float64)
    p = np.asarray([item[1] for item in batch], dtype=np.float64)
    y = np.asarray([item[2] for item in batch], dtype=np.float64)
    if q.shape[1] != d_in or p.shape[1] != d_in:
        raise ValueError(
            f"dimension mismatch: batch vectors have dims {q.shape[1]}/{p.shape[1]}, "
            f"model expects {d_in}"
        )
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite target in batch")
    return q, p, y


def _loss_arrays(model: AdapterModel, q: np.ndarray, p: np.ndarray, y: np.ndarray) -> float:
    s = np.einsum("ij,ij->i", _project(model, q), _project(model, p))
    return float(np.mean((s - y) ** 2))


def _gradient_arrays(
    model: AdapterModel, q: np.ndarray, p: np.ndarray, y: np.ndarray
) -> np.ndarray:
    w = model.weights
    a = q @ w
    b = p @ w
    if model.normalize_output:
        na = np.sqrt(np.einsum("ij,ij->i", a, a))
        nb = np.sqrt(np.einsum("ij,ij->i", b, b))
        if np.any(na == 0.0) or np.any(nb == 0.0):
            raise CollapsedEmbeddingError("collapsed embedding: zero-norm projected vector")
        a_hat = a / na[:, None]
        b_hat = b / nb[:, None]
        s = np.einsum("ij,ij->i", a_hat, b_hat)
        # Chain rule through the normalization: d s / d a = (b_hat - s a_hat) / |a|.
        grad_a = (b_hat - s[:, None] * a_hat) / na[:, None]
        grad_b = (a_hat - s[:, None] * b_hat) / nb[:, None]
    else:
        s = np.einsum("ij,ij->i", a, b)
        grad_a = b
        grad_b = a
    coeff = (2.0 / len(y)) * (s - y)
    return q.T @ (coeff[:, None] * grad_a) + p.T @ (coeff[:, None] * grad_b)


def loss(model: AdapterModel, batch: Sequence[tuple[np.ndarray, np.ndarray, float]]) -> float:
    """Mean of (f(q) . f(p) - target)^2 over the batch."""
    q, p, y = _batch_arrays(batch, model.d_in)
    return _loss_arrays(model, q, p, y)


def gradient(
    model: AdapterModel, batch: Sequence[tuple[np.ndarray, np.ndarray, float]]
) -> np.ndarray:
    """Analytic d loss / d W, including the normalization Jacobian."""
    q, p, y = _batch_arrays(batch, model.d_in)
    return _gradient_arrays(model, q, p, y)


def _target_vector(pairs: Sequence[LabeledPair], target_kind: str) -> np.ndarray:
    if target_kind == "hard":
        return np.asarray([lp.pair.hard_label for lp in pairs], dtype=np.float64)
    values = [getattr(lp, target_kind) for lp in pairs]
    if any(v is None for v in values):
        raise ValueError(f"missing {target_kind} targets; run labeling first")
    return np.asarray(values, dtype=np.float64)


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, w: np.ndarray, g: np.ndarray) -> None:
        w -= self.lr * g


class _Adam:
    def __init__(self, lr: float, shape: tuple[int, int]):
        self.lr = lr
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, w: np.ndarray, g: np.ndarray) -> None:
        self.t += 1
        self.m = _ADAM_BETA1 * self.m + (1 - _ADAM_BETA1) * g
        self.v = _ADAM_BETA2 * self.v + (1 - _ADAM_BETA2) * g * g
        m_hat = self.m / (1 - _ADAM_BETA1**self.t)
        v_hat = self.v / (1 - _ADAM_BETA2**self.t)
        w -= self.lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)


def train(
    base: EmbeddingMatrix, pairs: Sequence[LabeledPair], config: TrainConfig
) -> tuple[AdapterModel, TrainReport]:
    """Mini-batch training of the adapter; fully deterministic for a fixed seed.

    The last partial batch is kept, and per-epoch mean losses weight each
    batch by its actual size.
    """
    if not pairs:
        raise ValueError("empty dataset")
    start = time.perf_counter()
    n = len(pairs)
    q_all = base.stacked([lp.pair.query_id for lp in pairs]).astype(np.float64)
    p_all = base.stacked([lp.pair.passage_id for lp in pairs]).astype(np.float64)
    y_all = _target_vector(pairs, config.target_kind)

    model = initial_adapter(
        d_in=base.dim,
        seed=config.seed,
        normalize_output=config.normalize_output,
        base_model_id=base.model_id,
    )
    initial_loss = _loss_arrays(model, q_all, p_all, y_all)

    if config.optimizer == "adam":
        opt: _Sgd | _Adam = _Adam(config.learning_rate, model.weights.shape)
    else:
        opt = _Sgd(config.learning_rate)

    shuffle_rng = np.random.default_rng([config.seed, _SHUFFLE_STREAM])
    epoch_losses: list[float] = []
    step = 0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            q, p, y = q_all[idx], p_all[idx], y_all[idx]
            step += 1
            batch_loss = _loss_arrays(model, q, p, y)
            grad = _gradient_arrays(model, q, p, y)
            opt.step(model.weights, grad)
            if not np.isfinite(batch_loss) or not np.all(np.isfinite(model.weights)):
                raise DivergedError(f"diverged at step {step}")
            loss_sum += batch_loss * len(idx)
        epoch_losses.append(loss_sum / n)

    final_loss = _loss_arrays(model, q_all, p_all, y_all)
    report = TrainReport(
        epoch_losses=epoch_losses,
        initial_loss=initial_loss,
        final_loss=final_loss,
        steps=step,
        wall_time_s=time.perf_counter() - start,
        config=config,
    )
    return model, report


def apply_adapter(
    model: AdapterModel, base: EmbeddingMatrix, model_id: str | None = None
) -> EmbeddingMatrix:
    """Map every row of ``base`` through the adapter into a new matrix."""
    ids = list(base.rows.keys())
    adapted = _project(model, base.stacked(ids).astype(np.float64)).astype(np.float32)
    return EmbeddingMatrix(
        model_id=model_id if model_id is not None else f"{base.model_id}+adapter",
        dim=model.d_out,
        rows={tid: adapted[i] for i, tid in enumerate(ids)},
    )


def save_adapter(
    model: AdapterModel,
    path: str | Path,
    config: TrainConfig | None = None,
    sidecar_path: str | Path | None = None,
) -> None:
    """Checkpoint: weight rows in the binary matrix format plus a JSON sidecar."""
    path = Path(path)
    rows = {f"w_{i}": model.weights[i].astype(np.float32) for i in range(model.d_in)}
    save_matrix(EmbeddingMatrix(model_id="adapter", dim=model.d_out, rows=rows), path)
    sidecar = {
        "base_model_id": model.base_model_id,
        "normalize_output": model.normalize_output,
        "d_in": model.d_in,
        "d_out": model.d_out,
        "config": config.as_dict() if config is not None else None,
    }
    sidecar_file = Path(sidecar_path) if sidecar_path is not None else path.with_suffix(".json")
    with open(sidecar_file, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")


def load_adapter(path: str | Path, sidecar_path: str | Path | None = None) -> AdapterModel:
    path = Path(path)
    matrix = load_matrix(path, model_id="adapter")
    sidecar_file = Path(sidecar_path) if sidecar_path is not None else path.with_suffix(".json")
    with open(sidecar_file, "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    d_in, d_out = int(sidecar["d_in"]), int(sidecar["d_out"])
    weights = np.empty((d_in, d_out))
    for i in range(d_in):
        weights[i] = matrix.rows[f"w_{i}"]
    return AdapterModel(
        weights=weights,
        normalize_output=bool(sidecar["normalize_output"]),
        base_model_id=str(sidecar["base_model_id"]),
    )
