"""Iterative nullspace projection for removing linearly decodable group information."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GS_TOL = 1e-10


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class LinearGroupClassifier:
    W: np.ndarray  # (G', h); one row for binary groups
    bias: np.ndarray
    train_accuracy: float

    def predict(self, reps) -> np.ndarray:
        s = np.asarray(reps) @ self.W.T + self.bias
        if self.W.shape[0] == 1:
            return (s[:, 0] > 0).astype(np.int64)
        return np.argmax(s, axis=1)


def _hinge_fit(X: np.ndarray, t: np.ndarray, steps: int, lr: float, reg: float) -> tuple[np.ndarray, float]:
    """Full-batch subgradient descent on mean hinge loss + reg/2 * |w|^2; t in {-1, +1}."""
    n, h = X.shape
    w = np.zeros(h)
    b = 0.0
    for _ in range(steps):
        margin = t * (X @ w + b)
        active = margin < 1.0
        coef = np.where(active, -t, 0.0) / n
        w = w - lr * (X.T @ coef + reg * w)
        b = b - lr * coef.sum()
    return w, b


def fit_linear_group_classifier(
    reps, groups, steps: int = 500, lr: float = 0.1, reg: float = 1e-3
) -> LinearGroupClassifier:
    """L2-regularised hinge classifier (one-vs-rest beyond two groups)."""
    X = np.asarray(reps, dtype=np.float64)
    g = np.asarray(groups, dtype=np.int64)
    if X.shape[0] < 2:
        raise ProjectionError("need at least 2 instances")
    present = np.unique(g)
    if present.size < 2:
        raise ProjectionError("need at least two groups present")
    if present.size == 2:
        t = np.where(g == present[1], 1.0, -1.0)
        w, b = _hinge_fit(X, t, steps, lr, reg)
        W, bias = w[None, :], np.array([b])
        pred = np.where(X @ w + b > 0, present[1], present[0])
    else:
        rows = [_hinge_fit(X, np.where(g == c, 1.0, -1.0), steps, lr, reg) for c in present]
        W = np.stack([r[0] for r in rows])
        bias = np.array([r[1] for r in rows])
        pred = present[np.argmax(X @ W.T + bias, axis=1)]
    return LinearGroupClassifier(W, bias, float(np.mean(pred == g)))


def orthonormal_rows(W, basis: np.ndarray | None = None, tol: float = GS_TOL) -> np.ndarray:
    """Gram-Schmidt: extend ``basis`` (orthonormal rows) with the new directions in ``W``.

    Directions whose residual norm falls below ``tol`` (relative to the
    original row norm) are dropped. Two passes per row keep rounding drift down.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    rows = [] if basis is None else [r for r in np.atleast_2d(basis)]
    for w in W:
        norm0 = np.linalg.norm(w)
        if norm0 == 0:
            continue
        v = w.copy()
        for _ in range(2):
            for b in rows:
                v -= (v @ b) * b
        if np.linalg.norm(v) <= tol * max(norm0, 1.0):
            continue
        rows.append(v / np.linalg.norm(v))
    h = W.shape[1]
    return np.array(rows).reshape(len(rows), h)


def nullspace_projection(W) -> np.ndarray:
    """Orthogonal projector onto the nullspace of ``W``'s rows."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    B = orthonormal_rows(W)
    if B.shape[0] == 0:
        raise ProjectionError("W has no nonzero row")
    return np.eye(W.shape[1]) - B.T @ B


@dataclass
class ProjectionState:
    P: np.ndarray
    removed: np.ndarray  # orthonormal rows spanning the removed subspace
    accuracies: list[float] = field(default_factory=list)
    exhausted: bool = False

    @property
    def iterations(self) -> int:
        return len(self.accuracies)

    @property
    def rank(self) -> int:
        return self.P.shape[0] - self.removed.shape[0]

    def to_dict(self) -> dict:
        return {
            "h": int(self.P.shape[0]),
            "removed": self.removed.tolist(),
            "accuracies": list(self.accuracies),
            "exhausted": self.exhausted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionState":
        h = int(d["h"])
        removed = np.array(d["removed"], dtype=np.float64).reshape(-1, h)
        return cls(np.eye(h) - removed.T @ removed, removed, list(d["accuracies"]), bool(d.get("exhausted", False)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ProjectionState":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def majority_fraction(groups) -> float:
    _, c = np.unique(np.asarray(groups), return_counts=True)
    return float(c.max() / c.sum())


def inlp_run(reps, groups, max_iters: int = 10, stop_accuracy: float | None = None) -> ProjectionState:
    """Fit, project, repeat until the group classifier is near chance.

    Each iteration fits a classifier on the currently projected
    representations and records its training accuracy. If that accuracy is
    already at or below ``stop_accuracy`` the loop ends without projecting;
    otherwise the classifier's directions are added to the removed basis.
    """
    if max_iters < 1:
        raise ProjectionError("max_iters must be >= 1")
    X = np.asarray(reps, dtype=np.float64)
    h = X.shape[1]
    if stop_accuracy is None:
        stop_accuracy = majority_fraction(groups) + 0.02
    removed = np.zeros((0, h))
    P = np.eye(h)
    state = ProjectionState(P, removed)
    for _ in range(max_iters):
        clf = fit_linear_group_classifier(X @ P, groups)
        state.accuracies.append(clf.train_accuracy)
        if clf.train_accuracy <= stop_accuracy:
            break
        new = orthonormal_rows(clf.W, removed)
        if new.shape[0] == removed.shape[0]:
            state.exhausted = True
            break
        removed = new
        P = np.eye(h) - removed.T @ removed
        state.P, state.removed = P, removed
        if removed.shape[0] >= h:
            state.exhausted = True
            break
    return state


@dataclass(frozen=True)
class LinearHead:
    W: np.ndarray  # (K, h)
    b: np.ndarray

    def logits(self, reps) -> np.ndarray:
        return np.asarray(reps) @ self.W.T + self.b

    def predict(self, reps) -> np.ndarray:
        return np.argmax(self.logits(reps), axis=1)


def fit_softmax_head(reps, labels, K: int = 2, steps: int = 500, lr: float = 0.5) -> LinearHead:
    """Multinomial logistic regression by full-batch gradient descent from zero."""
    X = np.asarray(reps, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, h = X.shape
    W = np.zeros((K, h))
    b = np.zeros(K)
    onehot = np.eye(K)[y]
    for _ in range(steps):
        z = X @ W.T + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        d = (p - onehot) / n
        W -= lr * (d.T @ X)
        b -= lr * d.sum(axis=0)
    return LinearHead(W, b)


def apply_and_retrain(state: ProjectionState, reps, labels, K: int = 2, steps: int = 500, lr: float = 0.5) -> LinearHead:
    """Retrain the task head on projected representations.

    The returned head expects *unprojected* representations: its weights
    are multiplied by ``P`` (symmetric), so ``head.logits(h) == fitted(P h)``.
    """
    projected = np.asarray(reps, dtype=np.float64) @ state.P
    fitted = fit_softmax_head(projected, labels, K, steps, lr)
    return LinearHead(fitted.W @ state.P, fitted.b)
