"""Grouped datasets: synthetic generation, ratio-controlled resampling,
stratified splitting and CSV I/O.

All randomness goes through :func:`make_rng`, a Philox (counter-based)
generator keyed by integer seeds, so streams are reproducible across
platforms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Invalid dataset contents or file format."""


class CellStarvationError(DataError):
    """A (class, group) cell with positive fraction rounds to zero instances."""


class InsufficientDataError(DataError):
    """Source dataset cannot supply the requested cell counts."""


def make_rng(*keys: int) -> np.random.Generator:
    """Philox generator keyed by one or more non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


@dataclass(frozen=True, eq=False)
class LabeledGroupedDataset:
    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    n_classes: int = 2
    n_groups: int = 2

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(0, 0)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        g = np.asarray(self.groups, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", g)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        if not (x.shape[0] == y.shape[0] == g.shape[0]):
            raise DataError(
                f"length mismatch: features {x.shape[0]}, labels {y.shape[0]}, groups {g.shape[0]}"
            )
        if self.n_classes < 2 or self.n_groups < 2:
            raise DataError("need n_classes >= 2 and n_groups >= 2")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain non-finite values")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        if g.size and (g.min() < 0 or g.max() >= self.n_groups):
            raise DataError(f"groups must lie in [0, {self.n_groups})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx) -> "LabeledGroupedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledGroupedDataset(
            self.features[idx].reshape(len(idx), self.dim),
            self.labels[idx],
            self.groups[idx],
            self.n_classes,
            self.n_groups,
        )

    def equals(self, other: "LabeledGroupedDataset") -> bool:
        return (
            self.n_classes == other.n_classes
            and self.n_groups == other.n_groups
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.groups, other.groups)
        )


def concat(parts: Sequence[LabeledGroupedDataset]) -> LabeledGroupedDataset:
    first = parts[0]
    return LabeledGroupedDataset(
        np.concatenate([p.features.reshape(len(p), first.dim) for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.groups for p in parts]),
        first.n_classes,
        first.n_groups,
    )


@dataclass(frozen=True)
class ClassGroupCounts:
    n: np.ndarray  # (K,)
    n_yg: np.ndarray  # (K, G)
    n_g: np.ndarray  # (G,)
    total: int


def compute_counts(data: LabeledGroupedDataset) -> ClassGroupCounts:
    n_yg = np.zeros((data.n_classes, data.n_groups), dtype=np.int64)
    np.add.at(n_yg, (data.labels, data.groups), 1)
    return ClassGroupCounts(n=n_yg.sum(axis=1), n_yg=n_yg, n_g=n_yg.sum(axis=0), total=len(data))


@dataclass(frozen=True)
class RatioSpec:
    """Target class balance and within-class group mix.

    ``stereotype[y, g]`` is the fraction of class ``y`` that belongs to
    group ``g``. Class 1 is the positive class.
    """

    positive_fraction: float
    stereotype: tuple[tuple[float, ...], ...]
    target_size: int

    def __post_init__(self):
        s = tuple(tuple(float(v) for v in row) for row in self.stereotype)
        object.__setattr__(self, "stereotype", s)
        if not 0.0 < self.positive_fraction < 1.0:
            raise DataError(f"positive_fraction must be in (0, 1), got {self.positive_fraction}")
        if len(s) != 2:
            raise DataError("stereotype needs one row per class (2 rows)")
        for row in s:
            if len(row) != len(s[0]) or len(row) < 2:
                raise DataError("stereotype rows must have equal length >= 2")
            if any(v < 0 for v in row) or abs(sum(row) - 1.0) > 1e-9:
                raise DataError(f"stereotype row {row} must be non-negative and sum to 1")
        if self.target_size < 1:
            raise DataError("target_size must be >= 1")

    @property
    def class_fractions(self) -> np.ndarray:
        return np.array([1.0 - self.positive_fraction, self.positive_fraction])

    @property
    def cell_fractions(self) -> np.ndarray:
        return self.class_fractions[:, None] * np.array(self.stereotype)

    def to_dict(self) -> dict:
        return {
            "positive_fraction": self.positive_fraction,
            "stereotype": [list(r) for r in self.stereotype],
            "target_size": self.target_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RatioSpec":
        return cls(d["positive_fraction"], tuple(tuple(r) for r in d["stereotype"]), int(d["target_size"]))


def stereotyped(positive_fraction: float, ratio: float, target_size: int) -> RatioSpec:
    """Symmetric stereotyping: positives are ``ratio`` group 0, negatives ``ratio`` group 1."""
    return RatioSpec(positive_fraction, ((1.0 - ratio, ratio), (ratio, 1.0 - ratio)), target_size)


@dataclass(frozen=True)
class SyntheticSpec:
    d: int = 8
    class_separation: float = 2.0
    group_shift: float = 2.0
    noise_std: float = 1.0
    ratios: RatioSpec = field(default_factory=lambda: stereotyped(0.5, 0.5, 1000))

    def __post_init__(self):
        if self.d < 2:
            raise DataError("d must be >= 2")
        if self.noise_std <= 0:
            raise DataError("noise_std must be > 0")
        if self.class_separation < 0 or self.group_shift < 0:
            raise DataError("class_separation and group_shift must be >= 0")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "class_separation": self.class_separation,
            "group_shift": self.group_shift,
            "noise_std": self.noise_std,
            "ratios": self.ratios.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        kw = {k: d[k] for k in ("d", "class_separation", "group_shift", "noise_std") if k in d}
        if "ratios" in d:
            kw["ratios"] = RatioSpec.from_dict(d["ratios"])
        return cls(**kw)


def largest_remainder(total: int, fractions) -> np.ndarray:
    """Hamilton apportionment of ``total`` units by ``fractions``.

    Ties in the remainder go to the lower index.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    s = fr.sum()
    if total == 0 or s == 0:
        return np.zeros(fr.shape, dtype=np.int64)
    quota = total * fr / s
    base = np.floor(quota + 1e-9).astype(np.int64)
    rem = quota - base
    short = int(total - base.sum())
    if short > 0:
        order = np.lexsort((np.arange(fr.size), -rem))
        base[order[:short]] += 1
    return base


def cell_targets(ratios: RatioSpec) -> np.ndarray:
    """Per-cell counts: classes apportioned first, then groups within each class."""
    n = largest_remainder(ratios.target_size, ratios.class_fractions)
    st = np.array(ratios.stereotype)
    cells = np.stack([largest_remainder(int(n[y]), st[y]) for y in range(len(n))])
    starved = (cells == 0) & (ratios.cell_fractions > 0)
    if starved.any():
        y, g = np.argwhere(starved)[0]
        raise CellStarvationError(
            f"cell (class={y}, group={g}) rounds to 0 at target_size={ratios.target_size}"
        )
    return cells


def generate_synthetic(spec: SyntheticSpec, seed: int) -> LabeledGroupedDataset:
    """Gaussian blobs: class offset on axis 0, group offset on axis 1."""
    cells = cell_targets(spec.ratios)
    rng = make_rng(seed)
    xs, ys, gs = [], [], []
    for y in range(cells.shape[0]):
        for g in range(cells.shape[1]):
            m = int(cells[y, g])
            mean = np.zeros(spec.d)
            mean[0] = (y - 0.5) * spec.class_separation
            mean[1] = (g - 0.5) * spec.group_shift
            xs.append(mean + spec.noise_std * rng.standard_normal((m, spec.d)))
            ys.append(np.full(m, y))
            gs.append(np.full(m, g))
    perm = rng.permutation(int(cells.sum()))
    return LabeledGroupedDataset(
        np.concatenate(xs)[perm], np.concatenate(ys)[perm], np.concatenate(gs)[perm], 2, cells.shape[1]
    )


def resample_indices(data: LabeledGroupedDataset, ratios: RatioSpec, seed: int, exclude=None) -> np.ndarray:
    """Sorted indices of a without-replacement sample hitting the cell targets."""
    targets = cell_targets(ratios)
    if targets.shape != (data.n_classes, data.n_groups):
        raise DataError(f"ratio table shape {targets.shape} does not match dataset ({data.n_classes}, {data.n_groups})")
    available = np.ones(len(data), dtype=bool)
    if exclude is not None:
        available[np.asarray(exclude, dtype=np.int64)] = False
    rng = make_rng(seed)
    chosen = []
    for y in range(targets.shape[0]):
        for g in range(targets.shape[1]):
            pool = np.flatnonzero(available & (data.labels == y) & (data.groups == g))
            need = int(targets[y, g])
            if pool.size < need:
                raise InsufficientDataError(
                    f"cell (class={y}, group={g}) needs {need} instances but has {pool.size} "
                    f"(deficit {need - pool.size})"
                )
            chosen.append(rng.choice(pool, size=need, replace=False))
    return np.sort(np.concatenate(chosen))


def resample_to_ratios(data: LabeledGroupedDataset, ratios: RatioSpec, seed: int) -> LabeledGroupedDataset:
    return data.subset(resample_indices(data, ratios, seed))


def split(
    data: LabeledGroupedDataset, fractions: Sequence[float], seed: int
) -> tuple[LabeledGroupedDataset, LabeledGroupedDataset, LabeledGroupedDataset]:
    """Stratified train/dev/test split by (class, group) cell."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise DataError(f"split fractions must be 3 non-negative values summing to 1, got {fractions}")
    rng = make_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for y in range(data.n_classes):
        for g in range(data.n_groups):
            idx = np.flatnonzero((data.labels == y) & (data.groups == g))
            if idx.size == 0:
                continue
            if idx.size < int(np.count_nonzero(fr)):
                raise DataError(
                    f"cell (class={y}, group={g}) has {idx.size} instances, fewer than "
                    f"{np.count_nonzero(fr)} non-empty split parts"
                )
            idx = rng.permutation(idx)
            sizes = largest_remainder(idx.size, fr)
            bounds = np.concatenate([[0], np.cumsum(sizes)])
            for k in range(3):
                parts[k].append(idx[bounds[k] : bounds[k + 1]])
    out = []
    for p in parts:
        sel = np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64)
        out.append(data.subset(sel))
    return out[0], out[1], out[2]


def save_csv(data: LabeledGroupedDataset, path) -> None:
    """Write ``y,g,f0,...`` rows with 17 significant digits (exact for float64)."""
    header = ["y", "g"] + [f"f{j}" for j in range(data.dim)]
    lines = [",".join(header)]
    for y, g, row in zip(data.labels, data.groups, data.features):
        lines.append(",".join([str(int(y)), str(int(g))] + [format(float(v), ".17g") for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_csv(path, n_classes: int | None = None, n_groups: int | None = None) -> LabeledGroupedDataset:
    """Read a dataset CSV. ``n_classes``/``n_groups`` default to max id + 1 (at least 2)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: line 1: empty file") from None
        d = len(header) - 2
        expected = ["y", "g"] + [f"f{j}" for j in range(d)]
        if d < 1 or [h.strip() for h in header] != expected:
            raise DataError(f"{path}: line 1: malformed header {header!r}, expected y,g,f0,...")
        ys, gs, xs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise DataError(f"{path}: line {lineno}: expected {d + 2} fields, got {len(row)}")
            try:
                y, g = int(row[0]), int(row[1])
                x = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in x):
                raise DataError(f"{path}: line {lineno}: non-finite feature value")
            if y < 0 or (n_classes is not None and y >= n_classes):
                raise DataError(f"{path}: line {lineno}: label {y} out of range for K={n_classes}")
            if g < 0 or (n_groups is not None and g >= n_groups):
                raise DataError(f"{path}: line {lineno}: group {g} out of range for G={n_groups}")
            ys.append(y)
            gs.append(g)
            xs.append(x)
    if not ys:
        raise DataError(f"{path}: no data rows")
    K = n_classes if n_classes is not None else max(2, max(ys) + 1)
    G = n_groups if n_groups is not None else max(2, max(gs) + 1)
    return LabeledGroupedDataset(np.array(xs, dtype=np.float64), np.array(ys), np.array(gs), K, G)
