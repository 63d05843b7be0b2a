"""One-hidden-layer tanh MLP with an optional group-adversary head.

Gradient reversal is expressed directly in :func:`gradient`: the
adversary head descends its own cross-entropy while the shared layer
receives the main-task gradient minus ``lambda_adv`` times the
adversary's gradient.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .dataspace import ClassGroupCounts, LabeledGroupedDataset, compute_counts, make_rng
from .losses import LossSpec, LossTables, ObjectiveTerms, objective_terms

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wa", "ba")
SHARED = ("W1", "b1")
HEAD = ("W2", "b2")
ADVERSARY = ("Wa", "ba")
CHECKPOINT_FORMAT = "fairldam.mlp/1"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True, eq=False)
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wa: np.ndarray | None = None
    ba: np.ndarray | None = None

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=np.float64)
                v.setflags(write=False)
                object.__setattr__(self, name, v)
        h, d = self.W1.shape
        K = self.W2.shape[0]
        if self.b1.shape != (h,) or self.W2.shape != (K, h) or self.b2.shape != (K,):
            raise ValueError("inconsistent classifier parameter shapes")
        if (self.Wa is None) != (self.ba is None):
            raise ValueError("adversary head needs both Wa and ba")
        if self.Wa is not None and (self.Wa.shape[1] != h or self.ba.shape != (self.Wa.shape[0],)):
            raise ValueError("inconsistent adversary parameter shapes")
        if not all(np.all(np.isfinite(a)) for a in self.arrays().values()):
            raise ValueError("parameters must be finite")

    @property
    def dims(self) -> dict:
        return {
            "d": self.W1.shape[1],
            "h": self.W1.shape[0],
            "K": self.W2.shape[0],
            "G": None if self.Wa is None else self.Wa.shape[0],
        }

    @property
    def has_adversary(self) -> bool:
        return self.Wa is not None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES if getattr(self, k) is not None}

    def with_arrays(self, **arrays) -> "ModelParams":
        return replace(self, **arrays)


def init_params(d: int, h: int, K: int, G: int | None, seed: int, init_scale: float | None = None) -> ModelParams:
    """Uniform weights in +-init_scale (default 1/sqrt(fan_in)), zero biases."""
    rng = make_rng(seed)

    def w(rows, fan_in):
        s = init_scale if init_scale is not None else 1.0 / math.sqrt(fan_in)
        return rng.uniform(-s, s, size=(rows, fan_in))

    W1 = w(h, d)
    W2 = w(K, h)
    Wa = w(G, h) if G else None
    return ModelParams(W1, np.zeros(h), W2, np.zeros(K), Wa, None if Wa is None else np.zeros(G))


def forward(params: ModelParams, X) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.W1.shape[1]:
        raise ValueError(f"input shape {X.shape} incompatible with d={params.W1.shape[1]}")
    hidden = np.tanh(X @ params.W1.T + params.b1)
    logits = hidden @ params.W2.T + params.b2
    adv = hidden @ params.Wa.T + params.ba if params.Wa is not None else None
    return hidden, logits, adv


def predict(params: ModelParams, X) -> np.ndarray:
    """Argmax class; ties resolve to the smallest index."""
    return np.argmax(forward(params, X)[1], axis=1)


def _batch_arrays(batch):
    if isinstance(batch, LabeledGroupedDataset):
        return batch.features, batch.labels, batch.groups
    X, y, *rest = batch
    return np.asarray(X, dtype=np.float64), np.asarray(y), (np.asarray(rest[0]) if rest and rest[0] is not None else None)


def gradient(
    params: ModelParams,
    batch,
    loss_spec: LossSpec,
    counts: ClassGroupCounts | None = None,
    tables: LossTables | None = None,
) -> tuple[dict[str, np.ndarray], ObjectiveTerms]:
    """Analytic gradients for every parameter block plus the objective terms.

    ``batch`` is a dataset or an ``(X, y, g)`` tuple. ``counts`` are the
    training-set tallies used for margins and weights; they default to the
    batch's own tallies.
    """
    X, y, g = _batch_arrays(batch)
    if tables is None:
        if counts is None:
            if g is None:
                raise ValueError("counts are required when the batch has no groups")
            K = params.W2.shape[0]
            G = int(max(2, g.max() + 1, params.Wa.shape[0] if params.Wa is not None else 2))
            counts = compute_counts(LabeledGroupedDataset(X, y, g, K, G))
        tables = LossTables.build(loss_spec, counts)
    if loss_spec.has_adversary and not params.has_adversary:
        raise ValueError("LDAM_ADV requires a model with an adversary head")
    hidden, logits, adv_logits = forward(params, X)
    terms = objective_terms(
        logits, y, g, loss_spec, tables, adv_logits if loss_spec.has_adversary else None
    )
    grads = {
        "W2": terms.d_logits.T @ hidden,
        "b2": terms.d_logits.sum(axis=0),
    }
    d_hidden = terms.d_logits @ params.W2
    if params.has_adversary:
        if terms.d_adv_logits is not None:
            grads["Wa"] = terms.d_adv_logits.T @ hidden
            grads["ba"] = terms.d_adv_logits.sum(axis=0)
            d_hidden = d_hidden - loss_spec.lambda_adv * (terms.d_adv_logits @ params.Wa)
        else:
            grads["Wa"] = np.zeros_like(params.Wa)
            grads["ba"] = np.zeros_like(params.ba)
    d_pre = d_hidden * (1.0 - hidden**2)
    grads["W1"] = d_pre.T @ X
    grads["b1"] = d_pre.sum(axis=0)
    return grads, terms


def _block_objective(params, batch, spec, tables, name: str) -> float:
    X, y, g = _batch_arrays(batch)
    _, logits, adv_logits = forward(params, X)
    terms = objective_terms(logits, y, g, spec, tables, adv_logits if spec.has_adversary else None)
    if name in ADVERSARY:
        return terms.components.get("adv", 0.0)
    return terms.total


def grad_check(
    params: ModelParams,
    batch,
    loss_spec: LossSpec,
    h: float = 1e-5,
    counts: ClassGroupCounts | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The adversary head is checked against its own CE; the shared layer and
    classifier head against the signed total objective.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    X, y, g = _batch_arrays(batch)
    if counts is None:
        K = params.W2.shape[0]
        G = int(max(2, g.max() + 1)) if g is not None else 2
        counts = compute_counts(LabeledGroupedDataset(X, y, g if g is not None else np.zeros(len(y)), K, G))
    tables = LossTables.build(loss_spec, counts)
    analytic, _ = gradient(params, batch, loss_spec, tables=tables)
    worst = 0.0
    for name, arr in params.arrays().items():
        if name in ADVERSARY and not loss_spec.has_adversary:
            continue
        base = np.array(arr)
        for idx in np.ndindex(base.shape):
            plus = base.copy()
            plus[idx] += h
            minus = base.copy()
            minus[idx] -= h
            fp = _block_objective(params.with_arrays(**{name: plus}), batch, loss_spec, tables, name)
            fm = _block_objective(params.with_arrays(**{name: minus}), batch, loss_spec, tables, name)
            num = (fp - fm) / (2.0 * h)
            ana = analytic[name][idx]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    init_scale: float | None = None

    def __post_init__(self):
        if self.hidden_dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("hidden_dim, epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.init_scale is not None and self.init_scale <= 0:
            raise ValueError("init_scale must be > 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    dev_f: list[float] = field(default_factory=list)
    dev_fairness: list[float] = field(default_factory=list)
    n_updates: int = 0


def train(
    train_data: LabeledGroupedDataset,
    dev_data: LabeledGroupedDataset | None,
    loss_spec: LossSpec,
    config: TrainConfig,
) -> tuple[ModelParams, TrainHistory]:
    """Mini-batch SGD with momentum; batches reshuffled each epoch from the seed."""
    counts = compute_counts(train_data)
    tables = LossTables.build(loss_spec, counts)
    G = train_data.n_groups if loss_spec.has_adversary else None
    params = init_params(train_data.dim, config.hidden_dim, train_data.n_classes, G, config.seed, config.init_scale)
    theta = {k: np.array(v) for k, v in params.arrays().items()}
    velocity = {k: np.zeros_like(v) for k, v in theta.items()}
    hist = TrainHistory()
    N = len(train_data)
    X, y, g = train_data.features, train_data.labels, train_data.groups
    for epoch in range(config.epochs):
        order = make_rng(config.seed, epoch + 1).permutation(N)
        total, seen = 0.0, 0
        for start in range(0, N, config.batch_size):
            idx = order[start : start + config.batch_size]
            current = ModelParams(**theta)
            grads, terms = gradient(current, (X[idx], y[idx], g[idx]), loss_spec, tables=tables)
            if not math.isfinite(terms.total):
                raise TrainingDiverged(epoch, terms.total)
            for k in theta:
                velocity[k] = config.momentum * velocity[k] + grads[k]
                theta[k] = theta[k] - config.learning_rate * velocity[k]
            if not all(np.all(np.isfinite(v)) for v in theta.values()):
                raise TrainingDiverged(epoch, math.inf)
            total += terms.total * len(idx)
            seen += len(idx)
            hist.n_updates += 1
        epoch_loss = total / seen
        if not math.isfinite(epoch_loss) or not all(np.all(np.isfinite(v)) for v in theta.values()):
            raise TrainingDiverged(epoch, epoch_loss)
        hist.loss.append(epoch_loss)
        if dev_data is not None and len(dev_data) and train_data.n_classes == 2:
            preds = predict(ModelParams(**theta), dev_data.features)
            hist.dev_f.append(metrics.macro_f(preds, dev_data.labels, dev_data.n_classes))
            rates = metrics.group_rates(preds, dev_data.labels, dev_data.groups)
            hist.dev_fairness.append(1.0 - metrics.gap(rates))
    return ModelParams(**theta), hist


def params_to_dict(params: ModelParams) -> dict:
    out = {"format": CHECKPOINT_FORMAT, "dims": params.dims}
    for k in PARAM_NAMES:
        v = getattr(params, k)
        out[k] = None if v is None else v.tolist()
    return out


def params_from_dict(d: dict) -> ModelParams:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
    return ModelParams(**{k: (None if d.get(k) is None else np.array(d[k], dtype=np.float64)) for k in PARAM_NAMES})


def _dumps_17g(obj, indent: str = "") -> str:
    # json.dumps writes shortest-repr floats; checkpoints use fixed 17 significant digits
    if isinstance(obj, dict):
        inner = indent + " "
        items = [f"{inner}{json.dumps(k)}: {_dumps_17g(v, inner)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + indent + "}"
    if isinstance(obj, list):
        return "[" + ", ".join(_dumps_17g(v, indent) for v in obj) + "]"
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("non-finite value in checkpoint")
        return format(obj, ".17g")
    return json.dumps(obj)


def save_params(params: ModelParams, path) -> None:
    Path(path).write_text(_dumps_17g(params_to_dict(params)) + "\n", encoding="utf-8")


def load_params(path) -> ModelParams:
    return params_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
