"""Domain types for cardinality-based bag models.

A bag is an ordered collection of instance feature vectors carrying an
optional binary label.  The joint model couples a linear per-instance
potential exp(w_i * y_i) with a cardinality potential over the number of
positively labeled instances.  Everything here works in log space; a log
potential of -inf encodes a hard zero.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from typing import Union

import numpy as np

POSITIVE = 1
NEGATIVE = -1

_BAG_LABELS = (POSITIVE, NEGATIVE)


def _frozen_array(value, dtype=np.float64, ndim=None, name="array"):
    """Copy ``value`` into a read-only contiguous array."""
    arr = np.array(value, dtype=dtype, order="C", copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Bag:
    """A bag of instances with an optional binary bag label.

    Parameters
    ----------
    id : str
        Identifier, unique within a dataset.
    instances : (m, d) array_like
        One row per instance; m >= 1 and all entries finite.
    label : int or None
        +1, -1, or None for an unlabeled bag.
    """

    id: str
    instances: np.ndarray
    label: int | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("bag id must be a non-empty string")
        inst = _frozen_array(self.instances, ndim=2, name="instances")
        if inst.shape[0] < 1 or inst.shape[1] < 1:
            raise ValueError(f"bag {self.id!r}: instances must be a non-empty (m, d) matrix")
        if not np.isfinite(inst).all():
            raise ValueError(f"bag {self.id!r}: instances contain non-finite values")
        object.__setattr__(self, "instances", inst)
        if self.label is not None:
            if isinstance(self.label, bool) or self.label not in _BAG_LABELS:
                raise ValueError(f"bag {self.id!r}: label must be +1, -1 or None, got {self.label!r}")
            object.__setattr__(self, "label", int(self.label))

    @property
    def size(self) -> int:
        return self.instances.shape[0]

    @property
    def dimension(self) -> int:
        return self.instances.shape[1]


@dataclass(frozen=True)
class NormalPotential:
    """Soft quadratic preference on the fraction of positive instances.

    A positive bag prefers a fraction near ``mu``; a negative bag prefers a
    fraction near zero.  ``sigma`` controls how sharply deviations are
    penalized, on the scale of the fraction c/m.
    """

    mu: float
    sigma: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.mu <= 1.0) or not math.isfinite(self.mu):
            raise ValueError(f"mu must lie in [0, 1], got {self.mu!r}")
        if not (self.sigma > 0.0) or not math.isfinite(self.sigma):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")


@dataclass(frozen=True)
class RatioPotential:
    """Hard constraint on the fraction of positive instances.

    A positive bag requires at least a ``rho`` fraction of its instances to
    be positive; a negative bag requires strictly fewer.  Every count falls
    on exactly one side, so the two bag labels partition the counts.
    """

    rho: float

    def __post_init__(self):
        if not (0.0 < self.rho <= 1.0) or not math.isfinite(self.rho):
            raise ValueError(f"rho must lie in (0, 1], got {self.rho!r}")

    def threshold(self, bag_size: int) -> int:
        """Smallest count c with c / bag_size >= rho.

        The epsilon guard keeps counts that hit the ratio exactly on the
        positive side despite floating-point rounding of rho * m.
        """
        t = math.ceil(self.rho * bag_size - 1e-12)
        return max(1, t)


@dataclass(frozen=True)
class UniformPotential:
    """No count preference; both bag labels accept every count equally."""


@dataclass(frozen=True, eq=False)
class TabularPotential:
    """Explicit log-potential tables over counts 0..m for each bag label.

    Both tables must have length m + 1 for the bag size they are used with.
    Entries may be -inf (forbidden count) but each side needs at least one
    finite entry.
    """

    log_pos: np.ndarray
    log_neg: np.ndarray

    def __post_init__(self):
        pos = _frozen_array(self.log_pos, ndim=1, name="log_pos")
        neg = _frozen_array(self.log_neg, ndim=1, name="log_neg")
        if pos.size != neg.size:
            raise ValueError("log_pos and log_neg must have the same length")
        if pos.size < 2:
            raise ValueError("tables must cover counts 0..m with m >= 1")
        for name, table in (("log_pos", pos), ("log_neg", neg)):
            if np.isnan(table).any() or np.isposinf(table).any():
                raise ValueError(f"{name} entries must be finite or -inf")
            if not np.isfinite(table).any():
                raise ValueError(f"{name} must have at least one finite entry")
        object.__setattr__(self, "log_pos", pos)
        object.__setattr__(self, "log_neg", neg)

    @property
    def table_size(self) -> int:
        return self.log_pos.size


CardinalityPotential = Union[NormalPotential, RatioPotential, UniformPotential, TabularPotential]


def _check_bag_label(bag_label) -> int:
    if isinstance(bag_label, bool) or bag_label not in _BAG_LABELS:
        raise ValueError(f"bag label must be +1 or -1, got {bag_label!r}")
    return int(bag_label)


def log_potential_table(potential: CardinalityPotential, bag_label, bag_size: int) -> np.ndarray:
    """Log cardinality potential for every count 0..bag_size, as an array.

    Returns
    -------
    (bag_size + 1,) float64 array; entries are finite or -inf, never NaN.
    """
    label = _check_bag_label(bag_label)
    bag_size = operator.index(bag_size)
    if bag_size < 1:
        raise ValueError(f"bag size must be >= 1, got {bag_size}")
    if isinstance(potential, NormalPotential):
        frac = np.arange(bag_size + 1, dtype=np.float64) / bag_size
        center = potential.mu if label == POSITIVE else 0.0
        return -((frac - center) ** 2) / (2.0 * potential.sigma**2)
    if isinstance(potential, RatioPotential):
        t = potential.threshold(bag_size)
        counts = np.arange(bag_size + 1)
        admitted = counts >= t if label == POSITIVE else counts < t
        return np.where(admitted, 0.0, -np.inf)
    if isinstance(potential, UniformPotential):
        return np.zeros(bag_size + 1)
    if isinstance(potential, TabularPotential):
        if potential.table_size != bag_size + 1:
            raise ValueError(
                f"tabular potential covers counts 0..{potential.table_size - 1}, "
                f"but the bag has size {bag_size}"
            )
        table = potential.log_pos if label == POSITIVE else potential.log_neg
        return table.copy()
    raise TypeError(f"unknown cardinality potential {type(potential).__name__}")


def cardinality_log_potential(potential: CardinalityPotential, bag_label, count, bag_size: int) -> float:
    """Log cardinality potential of labeling exactly ``count`` instances positive."""
    count = operator.index(count)
    bag_size = operator.index(bag_size)
    if not (0 <= count <= bag_size):
        raise ValueError(f"count must lie in 0..{bag_size}, got {count}")
    return float(log_potential_table(potential, bag_label, bag_size)[count])


@dataclass(frozen=True, eq=False)
class InstanceModel:
    """Linear scorer: the log-potential of labeling an instance positive.

    ``weights`` has length d, or d + 1 when ``include_bias`` is set, in
    which case the trailing entry multiplies an implicit all-ones feature.
    """

    weights: np.ndarray
    include_bias: bool = False

    def __post_init__(self):
        w = _frozen_array(self.weights, ndim=1, name="weights")
        if w.size < 1 + int(self.include_bias):
            raise ValueError("weights too short for the declared bias term")
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "include_bias", bool(self.include_bias))

    @property
    def feature_dim(self) -> int:
        return self.weights.size - int(self.include_bias)


def unary_weights(model: InstanceModel, instances: np.ndarray) -> np.ndarray:
    """Per-instance unary weights w_i = theta . x_i (+ bias)."""
    X = np.asarray(instances, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"instances must be an (m, d) matrix, got shape {X.shape}")
    d = model.feature_dim
    if X.shape[1] != d:
        raise ValueError(f"model expects dimension {d}, instances have {X.shape[1]}")
    w = X @ model.weights[:d]
    if model.include_bias:
        w = w + model.weights[-1]
    return w


def unary_weight(model: InstanceModel, x: np.ndarray) -> float:
    """Unary weight of a single instance vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single instance vector, got shape {x.shape}")
    return float(unary_weights(model, x[None, :])[0])


def design_matrix(instances: np.ndarray, include_bias: bool) -> np.ndarray:
    """Instance matrix with an appended all-ones column when bias is used."""
    X = np.asarray(instances, dtype=np.float64)
    if not include_bias:
        return X
    return np.hstack([X, np.ones((X.shape[0], 1))])
