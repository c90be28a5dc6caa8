"""Dataset container, JSON-lines I/O, standardization, and a synthetic generator.

The on-disk format is one JSON object per line:

    {"id": "bag7", "label": 1, "instances": [[0.5, -1.25], [3.0, 2.0]]}

``label`` may be 1, -1, null, or absent (unlabeled).  Floats serialize
through json's shortest-exact representation, so save/load round trips are
bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import NEGATIVE, POSITIVE, Bag, _frozen_array

_SCALE_FLOOR = 1e-12


class DatasetFormatError(ValueError):
    """A dataset file failed validation; carries the path and line number."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Standardization:
    """Per-feature affine transform fitted on training instances."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = _frozen_array(self.mean, ndim=1, name="mean")
        scale = _frozen_array(self.scale, ndim=1, name="scale")
        if mean.size != scale.size:
            raise ValueError("mean and scale must have the same length")
        if (scale <= 0).any():
            raise ValueError("scale entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    def transform(self, instances: np.ndarray) -> np.ndarray:
        X = np.asarray(instances, dtype=np.float64)
        if X.shape[1] != self.mean.size:
            raise ValueError(
                f"standardization fitted on dimension {self.mean.size}, got {X.shape[1]}"
            )
        return (X - self.mean) / self.scale


@dataclass(frozen=True, eq=False)
class BagDataset:
    """An ordered collection of bags with unique ids and a common dimension.

    ``truth`` optionally carries generator-side instance labels for
    diagnostics; it never serializes.
    """

    bags: tuple[Bag, ...]
    standardization: Standardization | None = None
    truth: dict | None = None

    def __post_init__(self):
        bags = tuple(self.bags)
        if not bags:
            raise ValueError("a dataset must contain at least one bag")
        ids = [b.id for b in bags]
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise ValueError(f"duplicate bag id {dup!r}")
        d = bags[0].dimension
        for b in bags:
            if b.dimension != d:
                raise ValueError(
                    f"bag {b.id!r} has dimension {b.dimension}, expected {d}"
                )
        object.__setattr__(self, "bags", bags)

    def __len__(self) -> int:
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    @property
    def dimension(self) -> int:
        return self.bags[0].dimension

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(b.id for b in self.bags)

    @property
    def labels(self) -> list[int | None]:
        return [b.label for b in self.bags]


def _parse_record(obj, path, lineno) -> Bag:
    if not isinstance(obj, dict):
        raise DatasetFormatError("each line must be a JSON object", path, lineno)
    unknown = set(obj) - {"id", "label", "instances"}
    if unknown:
        raise DatasetFormatError(f"unknown fields {sorted(unknown)}", path, lineno)
    if "id" not in obj or not isinstance(obj["id"], str) or not obj["id"]:
        raise DatasetFormatError("missing or invalid 'id'", path, lineno)
    label = obj.get("label")
    if label is not None and (isinstance(label, bool) or label not in (POSITIVE, NEGATIVE)):
        raise DatasetFormatError(f"label must be 1, -1 or null, got {label!r}", path, lineno)
    inst = obj.get("instances")
    if not isinstance(inst, list) or not inst:
        raise DatasetFormatError("'instances' must be a non-empty list", path, lineno)
    try:
        arr = np.array(inst, dtype=np.float64)
    except (TypeError, ValueError):
        raise DatasetFormatError("instances are ragged or non-numeric", path, lineno) from None
    if arr.ndim != 2:
        raise DatasetFormatError("each instance must be a flat list of numbers", path, lineno)
    if not np.isfinite(arr).all():
        raise DatasetFormatError("instances contain non-finite values", path, lineno)
    try:
        return Bag(obj["id"], arr, label)
    except ValueError as exc:
        raise DatasetFormatError(str(exc), path, lineno) from None


def load(path) -> BagDataset:
    """Read a JSON-lines dataset; error messages carry line numbers."""
    bags: list[Bag] = []
    lines_by_id: dict[str, int] = {}
    dimension = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON ({exc.msg})", path, lineno) from None
            bag = _parse_record(obj, path, lineno)
            if bag.id in lines_by_id:
                raise DatasetFormatError(
                    f"duplicate bag id {bag.id!r} (first seen on line {lines_by_id[bag.id]})",
                    path, lineno,
                )
            lines_by_id[bag.id] = lineno
            if dimension is None:
                dimension = bag.dimension
            elif bag.dimension != dimension:
                raise DatasetFormatError(
                    f"bag {bag.id!r} has dimension {bag.dimension}, expected {dimension}",
                    path, lineno,
                )
            bags.append(bag)
    if not bags:
        raise DatasetFormatError("file contains no bags", path)
    return BagDataset(tuple(bags))


def save(dataset: BagDataset, path) -> None:
    """Write a dataset as JSON lines (bit-exact round trip)."""
    with open(path, "w", encoding="utf-8") as fh:
        for bag in dataset.bags:
            record = {
                "id": bag.id,
                "label": bag.label,
                "instances": [[float(v) for v in row] for row in bag.instances],
            }
            fh.write(json.dumps(record) + "\n")


def fit_standardization(dataset: BagDataset) -> Standardization:
    """Pooled per-feature mean and deviation over every training instance.

    Deviations below 1e-12 are floored so constant features map to zero
    rather than exploding.
    """
    pooled = np.vstack([b.instances for b in dataset.bags])
    mean = pooled.mean(axis=0)
    scale = np.maximum(pooled.std(axis=0), _SCALE_FLOOR)
    return Standardization(mean, scale)


def apply_standardization(dataset: BagDataset, std: Standardization) -> BagDataset:
    bags = tuple(
        Bag(b.id, std.transform(b.instances), b.label) for b in dataset.bags
    )
    return BagDataset(bags, standardization=std, truth=dataset.truth)


def standardize(train: BagDataset, *others: BagDataset) -> tuple[BagDataset, ...]:
    """Fit on ``train`` only, apply to train and any held-out datasets."""
    std = fit_standardization(train)
    return tuple(apply_standardization(ds, std) for ds in (train, *others))


@dataclass(frozen=True)
class SynthConfig:
    """Controls for the synthetic generator.

    Positive bags draw each instance as a witness with probability
    ``witness_rate``; witnesses shift the first coordinate by
    ``separation``.  Negative bags replace witnesses with confusers shifted
    by half the separation, at rate ``clutter_rate``.  Everything else is
    standard normal noise.
    """

    n_pos: int
    n_neg: int
    m_min: int
    m_max: int
    dimension: int
    witness_rate: float
    separation: float
    clutter_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_pos < 0 or self.n_neg < 0 or self.n_pos + self.n_neg < 1:
            raise ValueError("need at least one bag")
        if not (1 <= self.m_min <= self.m_max):
            raise ValueError(f"bag size range [{self.m_min}, {self.m_max}] is invalid")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        for name in ("witness_rate", "clutter_rate"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
        if not (self.separation >= 0.0) or not math.isfinite(self.separation):
            raise ValueError("separation must be finite and nonnegative")


def generate(cfg: SynthConfig) -> BagDataset:
    """Draw a synthetic dataset; identical seeds give identical bytes.

    The returned dataset's ``truth`` maps bag id to the 0/1 witness
    indicator per instance (all zeros in negative bags).
    """
    rng = np.random.default_rng(cfg.seed)
    bags = []
    truth = {}
    for kind, count, prefix in ((POSITIVE, cfg.n_pos, "pos"), (NEGATIVE, cfg.n_neg, "neg")):
        for i in range(count):
            m = int(rng.integers(cfg.m_min, cfg.m_max + 1))
            X = rng.standard_normal((m, cfg.dimension))
            if kind == POSITIVE:
                flags = rng.random(m) < cfg.witness_rate
                X[flags, 0] += cfg.separation
                witness = flags.astype(np.int64)
            else:
                flags = rng.random(m) < cfg.clutter_rate
                X[flags, 0] += 0.5 * cfg.separation
                witness = np.zeros(m, dtype=np.int64)
            bag_id = f"{prefix}{i:04d}"
            bags.append(Bag(bag_id, X, kind))
            truth[bag_id] = witness
    return BagDataset(tuple(bags), truth=truth)
