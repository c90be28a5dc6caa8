"""Marginal-weighted bag kernels and Gram matrices.

The bag kernel marginalizes an instance-level kernel over the model's
per-instance posteriors: with the positive-only label kernel it is
p^T K q for marginal vectors p, q and the instance kernel matrix K; the
identity label kernel adds the matching term for the negative labels,
(1-p)^T K (1-q).  Setting every marginal to one ("mi mode") drops the model
and recovers the plain all-pairs instance-kernel sum.  Normalization
divides by the geometric mean of the self-kernels, so self-similarity is
exactly one.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from .files import potential_to_doc
from .inference import Marginals, instance_marginals
from .model import Bag, CardinalityPotential, InstanceModel

LABEL_KINDS = ("positive", "identity")

# rows per block when materializing the three-way min tensor for the
# histogram-intersection kernel, to bound peak memory
_HIK_BLOCK_ELEMENTS = 20_000_000


class DegenerateBagError(Exception):
    """A bag's self-kernel is zero; its normalized kernel is undefined."""

    def __init__(self, bag_ids: Sequence[str]):
        self.bag_ids = tuple(bag_ids)
        super().__init__(f"zero self-kernel for bag(s): {', '.join(self.bag_ids)}")


@dataclass(frozen=True)
class LinearKernel:
    """Dot product of instance vectors."""


@dataclass(frozen=True)
class RbfKernel:
    """exp(-gamma * squared euclidean distance)."""

    gamma: float

    def __post_init__(self):
        if not (self.gamma > 0.0) or not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma!r}")


@dataclass(frozen=True)
class HistogramIntersectionKernel:
    """Sum of coordinatewise minima; requires nonnegative features."""


InstanceKernel = Union[LinearKernel, RbfKernel, HistogramIntersectionKernel]


def kernel_token(kind: InstanceKernel) -> str:
    """Single-token text form of an instance kernel, used in Gram headers."""
    if isinstance(kind, LinearKernel):
        return "linear"
    if isinstance(kind, RbfKernel):
        return f"rbf:gamma={kind.gamma:.17g}"
    if isinstance(kind, HistogramIntersectionKernel):
        return "hik"
    raise TypeError(f"unknown instance kernel {type(kind).__name__}")


def parse_kernel_token(token: str) -> InstanceKernel:
    if token == "linear":
        return LinearKernel()
    if token == "hik":
        return HistogramIntersectionKernel()
    if token.startswith("rbf:gamma="):
        return RbfKernel(float(token[len("rbf:gamma="):]))
    raise ValueError(f"unknown kernel token {token!r}")


def _check_label_kind(label_kind: str) -> str:
    if label_kind not in LABEL_KINDS:
        raise ValueError(f"label kind must be one of {LABEL_KINDS}, got {label_kind!r}")
    return label_kind


def _check_hik_features(X: np.ndarray, what: str) -> None:
    if X.min() < 0.0:
        raise ValueError(f"histogram intersection requires nonnegative features ({what})")


def instance_kernel_matrix(kind: InstanceKernel, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Instance kernel evaluated between every row of X and every row of Y."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2:
        raise ValueError("instance kernel inputs must be (m, d) matrices")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if isinstance(kind, LinearKernel):
        return X @ Y.T
    if isinstance(kind, RbfKernel):
        return np.exp(-kind.gamma * cdist(X, Y, "sqeuclidean"))
    if isinstance(kind, HistogramIntersectionKernel):
        _check_hik_features(X, "left argument")
        _check_hik_features(Y, "right argument")
        out = np.empty((X.shape[0], Y.shape[0]))
        step = max(1, _HIK_BLOCK_ELEMENTS // max(1, Y.shape[0] * Y.shape[1]))
        for s in range(0, X.shape[0], step):
            out[s:s + step] = np.minimum(X[s:s + step, None, :], Y[None, :, :]).sum(axis=-1)
        return out
    raise TypeError(f"unknown instance kernel {type(kind).__name__}")


def instance_kernel(kind: InstanceKernel, x: np.ndarray, y: np.ndarray) -> float:
    """Instance kernel between two single vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("expected single instance vectors")
    return float(instance_kernel_matrix(kind, x[None, :], y[None, :])[0, 0])


def _marginal_vector(marginals, bag: Bag, what: str) -> np.ndarray:
    probs = marginals.probs if isinstance(marginals, Marginals) else np.asarray(marginals, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size != bag.size:
        raise ValueError(
            f"{what}: marginal vector of length {probs.size} does not match bag "
            f"{bag.id!r} with {bag.size} instances"
        )
    if np.isnan(probs).any() or probs.min() < -1e-9 or probs.max() > 1.0 + 1e-9:
        raise ValueError(f"{what}: marginals must lie in [0, 1]")
    return np.clip(probs, 0.0, 1.0)


def unnormalized_bag_kernel(
    bag_p: Bag,
    bag_q: Bag,
    marg_p,
    marg_q,
    kind: InstanceKernel,
    label_kind: str = "positive",
) -> float:
    """Marginal-weighted sum of instance kernels between two bags."""
    _check_label_kind(label_kind)
    p = _marginal_vector(marg_p, bag_p, "left bag")
    q = _marginal_vector(marg_q, bag_q, "right bag")
    K = instance_kernel_matrix(kind, bag_p.instances, bag_q.instances)
    value = float(p @ K @ q)
    if label_kind == "identity":
        value += float((1.0 - p) @ K @ (1.0 - q))
    return value


def normalized_bag_kernel(
    bag_p: Bag,
    bag_q: Bag,
    marg_p,
    marg_q,
    kind: InstanceKernel,
    label_kind: str = "positive",
) -> float:
    """Unnormalized kernel divided by the geometric mean of the self-kernels."""
    cross = unnormalized_bag_kernel(bag_p, bag_q, marg_p, marg_q, kind, label_kind)
    self_p = unnormalized_bag_kernel(bag_p, bag_p, marg_p, marg_p, kind, label_kind)
    self_q = unnormalized_bag_kernel(bag_q, bag_q, marg_q, marg_q, kind, label_kind)
    bad = [bag.id for bag, s in ((bag_p, self_p), (bag_q, self_q)) if not s > 0.0]
    if bad:
        raise DegenerateBagError(bad)
    return cross / math.sqrt(self_p * self_q)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Normalized bag-kernel matrix with its provenance.

    ``fingerprint`` ties the matrix to the model/kernel configuration and
    the dataset ids it was built from, so downstream consumers can refuse
    mismatched artifacts.
    """

    values: np.ndarray
    bag_ids: tuple[str, ...]
    kernel_kind: InstanceKernel = LinearKernel()
    label_kind: str = "positive"
    mi_mode: bool = False
    fingerprint: str = ""

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        ids = tuple(self.bag_ids)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError(f"Gram matrix must be square, got shape {vals.shape}")
        if len(ids) != vals.shape[0]:
            raise ValueError("bag_ids length does not match the matrix")
        if len(set(ids)) != len(ids):
            raise ValueError("bag_ids must be unique")
        if not np.isfinite(vals).all():
            raise ValueError("Gram entries must be finite")
        if np.abs(vals - vals.T).max() > 1e-12:
            raise ValueError("Gram matrix is not symmetric within 1e-12")
        if np.abs(np.diag(vals) - 1.0).max() > 1e-12:
            raise ValueError("normalized Gram must have a unit diagonal")
        _check_label_kind(self.label_kind)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "bag_ids", ids)
        object.__setattr__(self, "mi_mode", bool(self.mi_mode))

    @property
    def size(self) -> int:
        return self.values.shape[0]


def gram_fingerprint(
    model: InstanceModel | None,
    potential: CardinalityPotential | None,
    kind: InstanceKernel,
    label_kind: str,
    mi_mode: bool,
    bag_ids: Sequence[str],
) -> str:
    """Two-part fingerprint ``<config8>.<data8>`` (hex), stable across runs."""
    if model is None:
        config = {"model": None}
    else:
        config = {
            "weights": [float(v) for v in model.weights],
            "include_bias": model.include_bias,
            "potential": potential_to_doc(potential),
        }
    config["kernel"] = kernel_token(kind)
    config["label_kind"] = label_kind
    config["mi_mode"] = bool(mi_mode)
    config_part = hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()
    ).hexdigest()[:8]
    data_part = hashlib.sha256("\n".join(bag_ids).encode()).hexdigest()[:8]
    return f"{config_part}.{data_part}"


def _bag_marginals(bags, model, potential, mi_mode):
    if mi_mode:
        return [np.ones(b.size) for b in bags]
    if model is None or potential is None:
        raise ValueError("a model and potential are required unless mi_mode is set")
    return [instance_marginals(b, model, potential).probs for b in bags]


def _dataset_bags(dataset) -> list[Bag]:
    bags = list(dataset.bags) if hasattr(dataset, "bags") else list(dataset)
    if not bags:
        raise ValueError("kernel computation requires at least one bag")
    return bags


def gram(
    dataset,
    model: InstanceModel | None,
    potential: CardinalityPotential | None,
    kind: InstanceKernel,
    label_kind: str = "positive",
    mi_mode: bool = False,
) -> GramMatrix:
    """Normalized bag-kernel Gram matrix over a dataset.

    Computes the upper triangle and mirrors it, so the result is symmetric
    to the last bit.  With ``mi_mode`` the model may be None.
    """
    _check_label_kind(label_kind)
    bags = _dataset_bags(dataset)
    margs = _bag_marginals(bags, model, potential, mi_mode)
    n = len(bags)
    unnorm = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            v = unnormalized_bag_kernel(bags[i], bags[j], margs[i], margs[j], kind, label_kind)
            unnorm[i, j] = v
            unnorm[j, i] = v
    selfs = np.diag(unnorm).copy()
    bad = [bags[i].id for i in range(n) if not selfs[i] > 0.0]
    if bad:
        raise DegenerateBagError(bad)
    values = unnorm / np.sqrt(np.outer(selfs, selfs))
    np.fill_diagonal(values, 1.0)
    ids = tuple(b.id for b in bags)
    return GramMatrix(
        values=values,
        bag_ids=ids,
        kernel_kind=kind,
        label_kind=label_kind,
        mi_mode=mi_mode,
        fingerprint=gram_fingerprint(model, potential, kind, label_kind, mi_mode, ids),
    )


def cross_gram(
    test_dataset,
    train_dataset,
    model: InstanceModel | None,
    potential: CardinalityPotential | None,
    kind: InstanceKernel,
    label_kind: str = "positive",
    mi_mode: bool = False,
) -> np.ndarray:
    """Normalized kernels between test bags (rows) and train bags (columns)."""
    _check_label_kind(label_kind)
    test_bags = _dataset_bags(test_dataset)
    train_bags = _dataset_bags(train_dataset)
    test_margs = _bag_marginals(test_bags, model, potential, mi_mode)
    train_margs = _bag_marginals(train_bags, model, potential, mi_mode)

    def selfs(bags, margs):
        return np.array([
            unnormalized_bag_kernel(b, b, mg, mg, kind, label_kind)
            for b, mg in zip(bags, margs)
        ])

    test_selfs = selfs(test_bags, test_margs)
    train_selfs = selfs(train_bags, train_margs)
    bad = [b.id for b, s in zip(test_bags, test_selfs) if not s > 0.0]
    bad += [b.id for b, s in zip(train_bags, train_selfs) if not s > 0.0]
    if bad:
        raise DegenerateBagError(bad)
    out = np.empty((len(test_bags), len(train_bags)))
    for i, (tb, tm) in enumerate(zip(test_bags, test_margs)):
        for j, (rb, rm) in enumerate(zip(train_bags, train_margs)):
            out[i, j] = unnormalized_bag_kernel(tb, rb, tm, rm, kind, label_kind)
    return out / np.sqrt(np.outer(test_selfs, train_selfs))


def format_gram(g: GramMatrix) -> str:
    """Text form: header ``N kernel label fingerprint``, then N matrix rows."""
    label_token = g.label_kind + ("-mi" if g.mi_mode else "")
    lines = [f"{g.size} {kernel_token(g.kernel_kind)} {label_token} {g.fingerprint or '-'}"]
    for row in g.values:
        lines.append(" ".join(format(v, ".17g") for v in row))
    return "\n".join(lines) + "\n"


def write_gram(g: GramMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_gram(g))


def read_gram(path, bag_ids: Sequence[str] | None = None) -> GramMatrix:
    """Parse a Gram text file.

    The file stores no bag ids; pass the ids of the dataset the matrix was
    built from, or integer-string placeholders are generated.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ValueError(f"{path}: malformed Gram header")
        n = int(header[0])
        kind = parse_kernel_token(header[1])
        label_token = header[2]
        mi_mode = label_token.endswith("-mi")
        label_kind = label_token[:-3] if mi_mode else label_token
        fingerprint = "" if header[3] == "-" else header[3]
        rows = []
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) != n:
                raise ValueError(f"{path}: row {i} has {len(parts)} entries, expected {n}")
            rows.append([float(v) for v in parts])
    ids = tuple(bag_ids) if bag_ids is not None else tuple(str(i) for i in range(n))
    if len(ids) != n:
        raise ValueError(f"{path}: got {len(ids)} bag ids for an order-{n} Gram")
    return GramMatrix(
        values=np.array(rows),
        bag_ids=ids,
        kernel_kind=kind,
        label_kind=label_kind,
        mi_mode=mi_mode,
        fingerprint=fingerprint,
    )
