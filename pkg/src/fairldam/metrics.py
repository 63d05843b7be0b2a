"""Macro-F, equalised-odds GAP, Pareto frontiers and model selection."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GroupRates:
    tpr: np.ndarray
    tnr: np.ndarray
    # True where a rate had a zero denominator and was set to 1.
    tpr_undefined: np.ndarray
    tnr_undefined: np.ndarray


@dataclass(frozen=True)
class EvalReport:
    macro_f: float
    tpr: tuple[float, ...]
    tnr: tuple[float, ...]
    gap: float
    one_minus_gap: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "macro_f": self.macro_f,
            "tpr": list(self.tpr),
            "tnr": list(self.tnr),
            "gap": self.gap,
            "one_minus_gap": self.one_minus_gap,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class TradeoffPoint:
    f: float
    fairness: float
    config_id: str


def macro_f(preds, labels, K: int) -> float:
    """Unweighted mean of per-class F1; a class never predicted nor present scores 0."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have equal length")
    if preds.size == 0:
        raise ValueError("macro_f of empty input")
    scores = []
    for c in range(K):
        tp = np.count_nonzero((preds == c) & (labels == c))
        fp = np.count_nonzero((preds == c) & (labels != c))
        fn = np.count_nonzero((preds != c) & (labels == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def group_rates(preds, labels, groups, n_groups: int | None = None) -> GroupRates:
    """Per-group TPR and TNR for binary labels (1 = positive)."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if labels.size and (labels.max() > 1 or preds.max() > 1):
        raise ValueError("group_rates requires binary labels (K=2)")
    G = n_groups if n_groups is not None else max(2, int(groups.max()) + 1 if groups.size else 2)
    tpr, tnr = np.ones(G), np.ones(G)
    tpr_u, tnr_u = np.zeros(G, dtype=bool), np.zeros(G, dtype=bool)
    for g in range(G):
        m = groups == g
        pos = m & (labels == 1)
        neg = m & (labels == 0)
        if pos.any():
            tpr[g] = np.count_nonzero(preds[pos] == 1) / np.count_nonzero(pos)
        else:
            tpr_u[g] = True
        if neg.any():
            tnr[g] = np.count_nonzero(preds[neg] == 0) / np.count_nonzero(neg)
        else:
            tnr_u[g] = True
    return GroupRates(tpr, tnr, tpr_u, tnr_u)


def gap(rates: GroupRates) -> float:
    """Mean of the absolute TPR and TNR differences between groups 0 and 1."""
    if len(rates.tpr) != 2:
        raise ValueError("gap is defined for two groups")
    return float((abs(rates.tpr[0] - rates.tpr[1]) + abs(rates.tnr[0] - rates.tnr[1])) / 2.0)


def evaluate_predictions(preds, labels, groups, K: int = 2) -> EvalReport:
    rates = group_rates(preds, labels, groups, n_groups=2)
    g = gap(rates)
    return EvalReport(
        macro_f=macro_f(preds, labels, K),
        tpr=tuple(float(v) for v in rates.tpr),
        tnr=tuple(float(v) for v in rates.tnr),
        gap=g,
        one_minus_gap=1.0 - g,
        degenerate=bool(rates.tpr_undefined.any() or rates.tnr_undefined.any()),
    )


def dominates(a: TradeoffPoint, b: TradeoffPoint) -> bool:
    return a.f >= b.f and a.fairness >= b.fairness and (a.f > b.f or a.fairness > b.fairness)


def pareto_frontier(points) -> list[TradeoffPoint]:
    """Non-dominated points, first occurrence kept for duplicate coordinates.

    Result is sorted by descending F-score.
    """
    points = list(points)
    if not points:
        raise ValueError("pareto_frontier of empty set")
    # sweep by f descending, fairness descending: a point survives iff its
    # fairness beats everything already seen with strictly larger f.
    order = sorted(range(len(points)), key=lambda i: (-points[i].f, -points[i].fairness, i))
    out: list[TradeoffPoint] = []
    best_fair = -np.inf
    seen = set()
    for i in order:
        p = points[i]
        key = (p.f, p.fairness)
        if key in seen:
            continue
        if out and out[-1].f == p.f:
            # same f, lower fairness than the survivor just kept
            continue
        if p.fairness > best_fair:
            out.append(p)
            best_fair = p.fairness
            seen.add(key)
    return out


class Policy(str, enum.Enum):
    BEST_DEV_F = "BEST_DEV_F"
    FAIREST_DEV = "FAIREST_DEV"
    HARMONIC_MEAN = "HARMONIC_MEAN"
    F_FLOOR_THEN_MIN_GAP = "F_FLOOR_THEN_MIN_GAP"


class SelectionError(ValueError):
    pass


def harmonic_mean(f: float, fairness: float) -> float:
    return 0.0 if f + fairness == 0 else 2.0 * f * fairness / (f + fairness)


def select_model(candidates, policy: Policy | str, floor: float | None = None) -> str:
    """Pick a config_id from dev-set trade-off points.

    Ties go to the smallest config_id.
    """
    policy = Policy(policy)
    pts = sorted(candidates, key=lambda p: p.config_id)
    if not pts:
        raise SelectionError("no candidates")
    if policy is Policy.BEST_DEV_F:
        key = lambda p: p.f
    elif policy is Policy.FAIREST_DEV:
        key = lambda p: p.fairness
    elif policy is Policy.HARMONIC_MEAN:
        key = lambda p: harmonic_mean(p.f, p.fairness)
    else:
        if floor is None:
            raise SelectionError("F_FLOOR_THEN_MIN_GAP needs a floor")
        pts = [p for p in pts if p.f >= floor]
        if not pts:
            raise SelectionError(f"no candidate reaches F-score floor {floor}")
        key = lambda p: p.fairness
    best = pts[0]
    for p in pts[1:]:
        if key(p) > key(best):
            best = p
    return best.config_id
