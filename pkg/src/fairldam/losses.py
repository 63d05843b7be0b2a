"""Training objectives for imbalanced and group-fair classification.

Every loss here works on raw logits ``z`` (n x K) and also returns its
gradient with respect to those logits, so the network module only has to
backpropagate through the affine/tanh layers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import math

import numpy as np

from .dataspace import ClassGroupCounts


class Variant(str, enum.Enum):
    VANILLA = "VANILLA"
    CW = "CW"
    IW = "IW"
    FOCAL = "FOCAL"
    LDAM = "LDAM"
    LDAM_CW = "LDAM_CW"
    LDAM_IW = "LDAM_IW"
    LDAM_ADV = "LDAM_ADV"
    LDAM_REG = "LDAM_REG"


LDAM_FAMILY = {Variant.LDAM, Variant.LDAM_CW, Variant.LDAM_IW, Variant.LDAM_ADV, Variant.LDAM_REG}
NEEDS_GROUPS = {Variant.IW, Variant.LDAM_IW, Variant.LDAM_ADV, Variant.LDAM_REG}


class LossSpecError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    variant: Variant = Variant.VANILLA
    C: float = 1.0
    beta: float = 0.9999
    rho: float = 0.0
    lambda_adv: float = 0.0
    gamma: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.C < 0:
            raise LossSpecError("C must be >= 0")
        if not 0.0 <= self.beta < 1.0:
            raise LossSpecError("beta must be in [0, 1)")
        if self.rho < 0 or self.lambda_adv < 0 or self.gamma < 0:
            raise LossSpecError("rho, lambda_adv and gamma must be >= 0")

    @property
    def needs_groups(self) -> bool:
        return self.variant in NEEDS_GROUPS

    @property
    def has_adversary(self) -> bool:
        return self.variant is Variant.LDAM_ADV

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        return cls(**{k: d[k] for k in ("variant", "C", "beta", "rho", "lambda_adv", "gamma") if k in d})


# --- primitives -----------------------------------------------------------


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def cross_entropy(z, y) -> np.ndarray:
    """Per-row CE; accepts a single logit vector or an (n, K) matrix."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    return -log_softmax(z)[np.arange(len(y)), y]


def ldam_margins(counts, C: float) -> np.ndarray:
    """Per-class margins ``C / n_j ** (1/4)``."""
    n = np.asarray(counts.n if isinstance(counts, ClassGroupCounts) else counts, dtype=np.float64)
    if C < 0:
        raise LossSpecError("C must be >= 0")
    if C == 0:
        return np.zeros_like(n)
    if np.any(n < 1):
        raise LossSpecError(f"margin undefined for empty class (counts {n.tolist()})")
    return C / n**0.25


def _margin_logits(z: np.ndarray, y: np.ndarray, delta: np.ndarray) -> np.ndarray:
    zm = z.copy()
    zm[np.arange(len(y)), y] -= delta[y]
    return zm


def ldam_loss(z, y, delta) -> np.ndarray:
    """CE after subtracting the true class margin from its logit."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    return cross_entropy(_margin_logits(z, y, np.asarray(delta, dtype=np.float64)), y)


def focal_loss(z, y, gamma: float) -> np.ndarray:
    """``-(1 - p_y)**gamma * log p_y`` per row."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    logp = log_softmax(z)[np.arange(len(y)), y]
    return -((-np.expm1(logp)) ** gamma) * logp


def raw_group_weights(counts, beta: float) -> np.ndarray:
    """Smoothed inverse frequency ``(1 - beta) / (1 - beta**N_yg)``; empty cells get 0."""
    n_yg = np.asarray(counts.n_yg if isinstance(counts, ClassGroupCounts) else counts, dtype=np.float64)
    if not 0.0 <= beta < 1.0:
        raise LossSpecError("beta must be in [0, 1)")
    out = np.zeros_like(n_yg)
    nz = n_yg > 0
    if beta == 0.0:
        out[nz] = 1.0
    else:
        out[nz] = (1.0 - beta) / -np.expm1(n_yg[nz] * np.log(beta))
    return out


def _dataset_mean_normalize(raw: np.ndarray, n_yg: np.ndarray) -> np.ndarray:
    mean = (raw * n_yg).sum() / n_yg.sum()
    return raw / mean


def group_instance_weights(counts: ClassGroupCounts, beta: float) -> np.ndarray:
    """K x G weights, normalised so the average training-instance weight is 1."""
    return _dataset_mean_normalize(raw_group_weights(counts, beta), counts.n_yg.astype(np.float64))


def class_weights(counts) -> np.ndarray:
    """Inverse class proportion, scaled so the weights average 1 over classes."""
    n = np.asarray(counts.n if isinstance(counts, ClassGroupCounts) else counts, dtype=np.float64)
    if np.any(n < 1):
        raise LossSpecError(f"class weight undefined for empty class (counts {n.tolist()})")
    raw = n.sum() / n
    return raw / raw.mean()


def cell_inverse_weights(counts: ClassGroupCounts) -> np.ndarray:
    """Inverse class-and-group proportion ``N / N_yg``; dataset-mean 1, empty cells 0."""
    n_yg = counts.n_yg.astype(np.float64)
    raw = np.zeros_like(n_yg)
    raw[n_yg > 0] = n_yg.sum() / n_yg[n_yg > 0]
    return _dataset_mean_normalize(raw, n_yg)


def mmd_penalty(outputs, groups) -> float:
    """Sum over present groups of squared distance between group-mean and overall-mean output."""
    return _mmd_with_grad(np.asarray(outputs, dtype=np.float64), np.asarray(groups))[0]


def _mmd_with_grad(p: np.ndarray, groups: np.ndarray) -> tuple[float, np.ndarray]:
    if p.ndim == 1:
        p = p[:, None]
    n = p.shape[0]
    mu = p.mean(axis=0)
    total = 0.0
    grad = np.zeros_like(p)
    diffs = np.zeros_like(mu)
    for g in np.unique(groups):
        mask = groups == g
        diff = p[mask].mean(axis=0) - mu
        total += float(diff @ diff)
        grad[mask] += 2.0 * diff / mask.sum()
        diffs += diff
    grad -= 2.0 * diffs / n
    return total, grad


# --- composite objective --------------------------------------------------


@dataclass(frozen=True)
class LossTables:
    """Per-dataset constants an objective needs: margins and instance weights."""

    delta: np.ndarray
    weights: np.ndarray | None  # K x G instance weight table, None for unweighted

    @classmethod
    def build(cls, spec: LossSpec, counts: ClassGroupCounts) -> "LossTables":
        v = spec.variant
        K, G = counts.n_yg.shape
        delta = ldam_margins(counts, spec.C) if v in LDAM_FAMILY else np.zeros(K)
        if v in (Variant.CW, Variant.LDAM_CW):
            w = np.repeat(class_weights(counts)[:, None], G, axis=1)
        elif v is Variant.IW:
            w = cell_inverse_weights(counts)
        elif v is Variant.LDAM_IW:
            w = group_instance_weights(counts, spec.beta)
        else:
            w = None
        return cls(delta, w)


@dataclass
class ObjectiveTerms:
    """Value breakdown plus logit gradients of one batch objective.

    ``total = main + rho * mmd - lambda_adv * adv``. ``d_logits`` is the
    gradient of ``main + rho * mmd``; ``d_adv_logits`` is the gradient of
    the (unsigned) adversary CE, which the network applies with the sign
    each parameter block calls for.
    """

    total: float
    components: dict = field(default_factory=dict)
    d_logits: np.ndarray | None = None
    d_adv_logits: np.ndarray | None = None


def _mean(v: np.ndarray) -> float:
    # exactly rounded sum: batch reductions must not depend on row order
    return math.fsum(v.tolist()) / len(v)


def objective_terms(
    logits: np.ndarray,
    labels: np.ndarray,
    groups: np.ndarray | None,
    spec: LossSpec,
    tables: LossTables,
    adv_logits: np.ndarray | None = None,
) -> ObjectiveTerms:
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, K = z.shape
    if n == 0:
        raise LossSpecError("empty batch")
    if spec.needs_groups and groups is None:
        raise LossSpecError(f"{spec.variant.value} requires group labels")
    if spec.has_adversary and adv_logits is None:
        raise LossSpecError("LDAM_ADV requires an adversary head")
    rows = np.arange(n)
    onehot = np.zeros_like(z)
    onehot[rows, y] = 1.0

    if spec.variant is Variant.FOCAL:
        logp_all = log_softmax(z)
        p = np.exp(logp_all)
        logp = logp_all[rows, y]
        q = -np.expm1(logp)  # 1 - p_y
        per = -(q**spec.gamma) * logp
        # d/dz_k = [gamma q^(g-1) p_y log p_y - q^g] (1[k=y] - p_k)
        if spec.gamma == 0.0:
            coef = -np.ones(n)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                coef = spec.gamma * q ** (spec.gamma - 1.0) * np.exp(logp) * logp - q**spec.gamma
            coef = np.where(q > 0, coef, 0.0)
        d_per = coef[:, None] * (onehot - p)
    else:
        zm = _margin_logits(z, y, tables.delta)
        logp_all = log_softmax(zm)
        per = -logp_all[rows, y]
        d_per = np.exp(logp_all) - onehot

    if tables.weights is not None:
        w = tables.weights[y, groups] if groups is not None else tables.weights[y, 0]
    else:
        w = np.ones(n)
    main = _mean(w * per)
    d_logits = (w / n)[:, None] * d_per
    comps = {"main": main}
    total = main

    if spec.variant is Variant.LDAM_REG:
        p = softmax(z)
        mmd, d_p = _mmd_with_grad(p, np.asarray(groups))
        comps["mmd"] = mmd
        total += spec.rho * mmd
        # softmax Jacobian-vector product
        d_logits = d_logits + spec.rho * p * (d_p - (d_p * p).sum(axis=1, keepdims=True))

    d_adv = None
    if spec.has_adversary:
        a = np.asarray(adv_logits, dtype=np.float64)
        g = np.asarray(groups, dtype=np.int64)
        alogp = log_softmax(a)
        adv = -_mean(alogp[rows, g])
        aone = np.zeros_like(a)
        aone[rows, g] = 1.0
        d_adv = (np.exp(alogp) - aone) / n
        comps["adv"] = adv
        total -= spec.lambda_adv * adv

    return ObjectiveTerms(total=total, components=comps, d_logits=d_logits, d_adv_logits=d_adv)


def composite_objective(batch, forward_out, spec: LossSpec, counts: ClassGroupCounts) -> tuple[float, dict]:
    """Total batch objective and its additive components.

    ``batch`` is a dataset (or anything with ``labels``/``groups``) and
    ``forward_out`` the ``(hidden, logits, adv_logits)`` triple from the
    network's forward pass.
    """
    _, logits, adv_logits = forward_out
    terms = objective_terms(
        logits, batch.labels, getattr(batch, "groups", None), spec, LossTables.build(spec, counts), adv_logits
    )
    return terms.total, terms.components
