"""Exact inference in the cardinality bag model.

The count distribution is the coefficient vector of the generating
polynomial prod_i (exp(-relu(w_i)) + exp(w_i - relu(w_i)) z): coefficient c
sums exp(sum_i w_i y_i) over all labelings with exactly c positives.  It is
held as nonnegative mantissas normalized so the largest entry is exactly 1,
plus one shared log-scale.  Convolutions then stay plain multiply-adds while
the log-scale absorbs a dynamic range that would otherwise overflow; a
mantissa that underflows to zero is a coefficient negligible relative to the
dominant one, which is harmless at the accuracy this module targets.

Leave-one-out marginals come from a downward pass over the same balanced
split tree: each leaf receives the count polynomial of all other instances
("outside" polynomial), built by convolving the parent's outside polynomial
with the sibling subtree polynomial.  Subtree polynomials are recomputed on
the way down rather than stored; recomputation at a node costs the square of
its subtree size, which sums to O(m^2) overall and keeps peak memory at
O(m log m).  Normalization factors cancel between the shifted and unshifted
count sums at each leaf, so the downward pass tracks no scales at all.

The numeric kernels are numba-compiled; ``brute_force`` deliberately avoids
all of them and enumerates labelings with plain numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .model import (
    NEGATIVE,
    POSITIVE,
    Bag,
    CardinalityPotential,
    InstanceModel,
    _check_bag_label,
    _frozen_array,
    log_potential_table,
    unary_weights,
)

BRUTE_FORCE_LIMIT = 20


class DegenerateModelError(Exception):
    """Both bag-label partition functions vanish; the bag likelihood is undefined."""


@dataclass(frozen=True, eq=False)
class CountDistribution:
    """Unnormalized distribution over the number of positive instances.

    ``mantissas[c] * exp(log_scale)`` is the generating-polynomial
    coefficient for count c.  Mantissas are nonnegative with maximum exactly
    1; construction renormalizes if needed.
    """

    mantissas: np.ndarray
    log_scale: float

    def __post_init__(self):
        mant = np.array(self.mantissas, dtype=np.float64, copy=True)
        if mant.ndim != 1 or mant.size < 2:
            raise ValueError("mantissas must be a 1-d array covering counts 0..m, m >= 1")
        if np.isnan(mant).any() or (mant < 0).any() or np.isinf(mant).any():
            raise ValueError("mantissas must be finite and nonnegative")
        top = mant.max()
        if top <= 0.0:
            raise ValueError("all-zero count distribution")
        scale = float(self.log_scale)
        if top != 1.0:
            mant /= top
            scale += float(np.log(top))
        mant.flags.writeable = False
        object.__setattr__(self, "mantissas", mant)
        object.__setattr__(self, "log_scale", scale)

    @property
    def bag_size(self) -> int:
        return self.mantissas.size - 1

    def log_coefficients(self) -> np.ndarray:
        """Log coefficients over counts 0..m; -inf where a mantissa underflowed."""
        with np.errstate(divide="ignore"):
            return np.log(self.mantissas) + self.log_scale


@dataclass(frozen=True, eq=False)
class Marginals:
    """Per-instance probabilities of being labeled positive.

    ``conditioning`` is +1 or -1 when conditioned on a bag label, None for
    the unconditional (bag-posterior-weighted) marginals.
    """

    probs: np.ndarray
    conditioning: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen_array(self.probs, ndim=1, name="probs"))
        if self.conditioning is not None and self.conditioning not in (POSITIVE, NEGATIVE):
            raise ValueError(f"conditioning must be +1, -1 or None, got {self.conditioning!r}")


@njit(cache=True)
def _conv_mantissas(p, q):
    """Convolve two mantissa vectors and renormalize so the max is exactly 1."""
    r = np.zeros(p.size + q.size - 1)
    for i in range(p.size):
        pi = p[i]
        if pi != 0.0:
            for j in range(q.size):
                r[i + j] += pi * q[j]
    mx = 0.0
    for k in range(r.size):
        if r[k] > mx:
            mx = r[k]
    # mx >= 1 here: both inputs contain an exact 1 and entries are nonnegative
    for k in range(r.size):
        r[k] /= mx
    return r, np.log(mx)


@njit(cache=True)
def _subtree_counts(w, lo, hi):
    """Mantissas and log-scale of the count polynomial for instances [lo, hi)."""
    if hi - lo == 1:
        p = np.empty(2)
        wi = w[lo]
        if wi > 0.0:
            p[0] = np.exp(-wi)
            p[1] = 1.0
            return p, wi
        p[0] = 1.0
        p[1] = np.exp(wi)
        return p, 0.0
    mid = (lo + hi) // 2
    pl, sl = _subtree_counts(w, lo, mid)
    pr, sr = _subtree_counts(w, mid, hi)
    r, corr = _conv_mantissas(pl, pr)
    return r, sl + sr + corr


@njit(cache=True)
def _marginals_recurse(w, lo, hi, outside, log_table, out):
    """Fill out[lo:hi] with leave-one-out conditional marginals.

    ``outside`` holds normalized count mantissas for every instance outside
    [lo, hi).  At a leaf the marginal is sigmoid(w_i + a1 - a0) with a1/a0
    the log count sums that place the held-out instance positive/negative;
    shared normalization constants cancel in the difference.
    """
    if hi - lo == 1:
        logp = np.log(outside)  # -inf where a coefficient underflowed
        b0 = -np.inf
        b1 = -np.inf
        for c in range(outside.size):
            v = log_table[c] + logp[c]
            if v > b0:
                b0 = v
            v = log_table[c + 1] + logp[c]
            if v > b1:
                b1 = v
        if b1 == -np.inf:
            out[lo] = 0.0
            return
        if b0 == -np.inf:
            out[lo] = 1.0
            return
        s0 = 0.0
        s1 = 0.0
        for c in range(outside.size):
            s0 += np.exp(log_table[c] + logp[c] - b0)
            s1 += np.exp(log_table[c + 1] + logp[c] - b1)
        a0 = b0 + np.log(s0)
        a1 = b1 + np.log(s1) + w[lo]
        diff = a0 - a1
        if diff > 700.0:
            out[lo] = 0.0
        else:
            out[lo] = 1.0 / (1.0 + np.exp(diff))
        return
    mid = (lo + hi) // 2
    pl, _sl = _subtree_counts(w, lo, mid)
    pr, _sr = _subtree_counts(w, mid, hi)
    out_left, _cl = _conv_mantissas(outside, pr)
    _marginals_recurse(w, lo, mid, out_left, log_table, out)
    out_right, _cr = _conv_mantissas(outside, pl)
    _marginals_recurse(w, mid, hi, out_right, log_table, out)


def _counts_from_weights(w: np.ndarray) -> CountDistribution:
    mant, scale = _subtree_counts(np.ascontiguousarray(w, dtype=np.float64), 0, w.size)
    return CountDistribution(mant, float(scale))


def _log_dot(log_table: np.ndarray, counts: CountDistribution) -> float:
    """log sum_c exp(log_table[c]) * coefficient_c, including the scale."""
    with np.errstate(divide="ignore"):
        terms = log_table + np.log(counts.mantissas)
    top = terms.max()
    if top == -np.inf:
        return -np.inf
    return float(top + np.log(np.exp(terms - top).sum()) + counts.log_scale)


def _marginals_from_weights(w: np.ndarray, log_table: np.ndarray) -> np.ndarray:
    out = np.empty(w.size)
    _marginals_recurse(
        np.ascontiguousarray(w, dtype=np.float64),
        0,
        w.size,
        np.ones(1),
        np.ascontiguousarray(log_table, dtype=np.float64),
        out,
    )
    return out


def count_distribution(bag: Bag, model: InstanceModel) -> CountDistribution:
    """Count distribution of ``bag`` under the instance model."""
    return _counts_from_weights(unary_weights(model, bag.instances))


def _both_partitions(bag, model, potential, counts=None):
    if counts is None:
        counts = count_distribution(bag, model)
    m = bag.size
    lzp = _log_dot(log_potential_table(potential, POSITIVE, m), counts)
    lzn = _log_dot(log_potential_table(potential, NEGATIVE, m), counts)
    if lzp == -np.inf and lzn == -np.inf:
        raise DegenerateModelError(
            f"bag {bag.id!r}: both bag-label partition functions are zero"
        )
    return counts, lzp, lzn


def log_partition(bag: Bag, model: InstanceModel, potential: CardinalityPotential, bag_label) -> float:
    """log Z for one bag label: log sum over labelings of potential products."""
    label = _check_bag_label(bag_label)
    _, lzp, lzn = _both_partitions(bag, model, potential)
    return lzp if label == POSITIVE else lzn


def bag_label_posterior(bag: Bag, model: InstanceModel, potential: CardinalityPotential) -> float:
    """P(Y = +1 | X) = Z+ / (Z+ + Z-)."""
    _, lzp, lzn = _both_partitions(bag, model, potential)
    return _posterior_from_partitions(lzp, lzn)


def _posterior_from_partitions(lzp: float, lzn: float) -> float:
    if lzp == -np.inf:
        return 0.0
    if lzn == -np.inf:
        return 1.0
    diff = lzn - lzp
    if diff > 700.0:
        return 0.0
    return float(1.0 / (1.0 + np.exp(diff)))


def conditional_marginals(
    bag: Bag, model: InstanceModel, potential: CardinalityPotential, bag_label
) -> Marginals:
    """P(y_i = 1 | Y = bag_label, X) for every instance."""
    label = _check_bag_label(bag_label)
    _, lzp, lzn = _both_partitions(bag, model, potential)
    lz = lzp if label == POSITIVE else lzn
    if lz == -np.inf:
        raise ValueError(
            f"bag {bag.id!r}: cannot condition on bag label {label:+d}; its partition function is zero"
        )
    w = unary_weights(model, bag.instances)
    table = log_potential_table(potential, label, bag.size)
    return Marginals(_marginals_from_weights(w, table), conditioning=label)


def instance_marginals(bag: Bag, model: InstanceModel, potential: CardinalityPotential) -> Marginals:
    """Unconditional marginals P(y_i = 1 | X), mixing over the bag posterior."""
    _, lzp, lzn = _both_partitions(bag, model, potential)
    post = _posterior_from_partitions(lzp, lzn)
    w = unary_weights(model, bag.instances)
    probs = np.zeros(bag.size)
    if post > 0.0:
        table = log_potential_table(potential, POSITIVE, bag.size)
        probs += post * _marginals_from_weights(w, table)
    if post < 1.0:
        table = log_potential_table(potential, NEGATIVE, bag.size)
        probs += (1.0 - post) * _marginals_from_weights(w, table)
    return Marginals(probs, conditioning=None)


def map_labeling(
    bag: Bag, model: InstanceModel, potential: CardinalityPotential, bag_label
) -> tuple[np.ndarray, float]:
    """Most probable instance labeling given the bag label.

    For a fixed count c the best labeling takes the c largest unary weights,
    so scanning counts over a sorted prefix-sum suffices.  Ties in weights go
    to the lowest instance indices; ties across counts to the smallest count.

    Returns
    -------
    labels : (m,) int array of 0/1
    score : float, log potential product of the returned labeling
    """
    label = _check_bag_label(bag_label)
    w = unary_weights(model, bag.instances)
    order = np.argsort(-w, kind="stable")
    prefix = np.concatenate([[0.0], np.cumsum(w[order])])
    scores = log_potential_table(potential, label, bag.size) + prefix
    best_c = int(np.argmax(scores))
    best = float(scores[best_c])
    if best == -np.inf:
        raise ValueError(
            f"bag {bag.id!r}: every count is forbidden for bag label {label:+d}"
        )
    labels = np.zeros(bag.size, dtype=np.int64)
    labels[order[:best_c]] = 1
    return labels, best


@dataclass(frozen=True, eq=False)
class BruteForceResult:
    """Everything the enumeration oracle computes for one bag.

    Sides whose partition function is zero have None in the conditional /
    MAP slots.
    """

    log_partition_pos: float
    log_partition_neg: float
    posterior: float
    conditional_pos: np.ndarray | None
    conditional_neg: np.ndarray | None
    marginals: np.ndarray
    map_pos: tuple[np.ndarray, float] | None
    map_neg: tuple[np.ndarray, float] | None


def brute_force(bag: Bag, model: InstanceModel, potential: CardinalityPotential) -> BruteForceResult:
    """Enumerate all 2^m labelings; reference implementation for small bags.

    Shares nothing with the convolution-tree path beyond the unary weights
    and potential tables.  Refuses bags with more than ``BRUTE_FORCE_LIMIT``
    instances.
    """
    m = bag.size
    if m > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force refused: bag size {m} exceeds {BRUTE_FORCE_LIMIT}")
    w = unary_weights(model, bag.instances)
    n = 1 << m
    assignments = np.empty((n, m), dtype=np.int8)
    codes = np.arange(n)
    for i in range(m):
        assignments[:, i] = (codes >> i) & 1
    total_w = assignments.astype(np.float64) @ w
    counts = assignments.sum(axis=1, dtype=np.int64)

    sides = {}
    for label in (POSITIVE, NEGATIVE):
        table = log_potential_table(potential, label, m)
        scores = table[counts] + total_w
        lz = float(logsumexp(scores))
        if lz == -np.inf:
            sides[label] = (lz, None, None)
            continue
        marg = np.empty(m)
        for i in range(m):
            on = assignments[:, i] == 1
            lse_on = logsumexp(scores[on])
            lse_off = logsumexp(scores[~on])
            marg[i] = _posterior_from_partitions(lse_on, lse_off)
        idx = int(np.argmax(scores))
        map_pair = (assignments[idx].astype(np.int64), float(scores[idx]))
        sides[label] = (lz, marg, map_pair)

    lzp, marg_pos, map_pos = sides[POSITIVE]
    lzn, marg_neg, map_neg = sides[NEGATIVE]
    if lzp == -np.inf and lzn == -np.inf:
        raise DegenerateModelError(
            f"bag {bag.id!r}: both bag-label partition functions are zero"
        )
    post = _posterior_from_partitions(lzp, lzn)
    uncond = np.zeros(m)
    if post > 0.0:
        uncond += post * marg_pos
    if post < 1.0:
        uncond += (1.0 - post) * marg_neg
    return BruteForceResult(
        log_partition_pos=lzp,
        log_partition_neg=lzn,
        posterior=post,
        conditional_pos=marg_pos,
        conditional_neg=marg_neg,
        marginals=uncond,
        map_pos=map_pos,
        map_neg=map_neg,
    )
