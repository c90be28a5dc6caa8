"""Maximum-likelihood training of the instance scorer.

The objective is the sum over labeled bags of log P(Y | X) minus a
regularizer, maximized by gradient ascent with backtracking line search.
The per-bag gradient contrasts instance marginals conditioned on the
observed bag label against the unconditional marginals, weighted by the
bag's design matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .inference import (
    DegenerateModelError,
    _counts_from_weights,
    _log_dot,
    _marginals_from_weights,
    _posterior_from_partitions,
)
from .model import (
    NEGATIVE,
    POSITIVE,
    Bag,
    CardinalityPotential,
    InstanceModel,
    design_matrix,
    log_potential_table,
)

_ARMIJO_SLOPE = 1e-4
_MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for ``fit``.

    ``lam`` scales the regularizer: the squared L2 norm for ``norm="l2"``,
    the L1 norm (subgradient zero at zero) for ``norm="l1"``.  ``restarts``
    reruns the ascent from fresh inits at seeds seed, seed+1, ... and keeps
    the best final objective.
    """

    lam: float = 1e-3
    norm: str = "l2"
    max_iters: int = 200
    grad_tol: float = 1e-4
    init_scale: float = 0.1
    seed: int = 0
    restarts: int = 1
    include_bias: bool = False

    def __post_init__(self):
        if not (self.lam >= 0.0) or not np.isfinite(self.lam):
            raise ValueError(f"lam must be a finite nonnegative float, got {self.lam!r}")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"norm must be 'l1' or 'l2', got {self.norm!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.grad_tol > 0.0):
            raise ValueError("grad_tol must be positive")
        if not (self.init_scale >= 0.0):
            raise ValueError("init_scale must be nonnegative")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class TrainReport:
    """Trace of one ``fit`` call (the winning restart)."""

    final_objective: float
    iterations: int
    converged: bool
    grad_norm_history: list[float] = field(default_factory=list)
    objective_history: list[float] = field(default_factory=list)
    message: str = ""
    restart_seed: int = 0


def _as_bags(dataset) -> list[Bag]:
    bags = list(dataset.bags) if hasattr(dataset, "bags") else list(dataset)
    if not bags:
        raise ValueError("training requires at least one bag")
    return bags


def _check_labeled(bags: Sequence[Bag]) -> None:
    missing = [b.id for b in bags if b.label is None]
    if missing:
        raise ValueError(f"all bags must be labeled for training; missing: {missing[:5]}")
    labels = {b.label for b in bags}
    if labels != {POSITIVE, NEGATIVE}:
        raise ValueError("training requires at least one bag of each label")


class _Prepared:
    """Per-bag design matrices and potential tables, fixed across theta."""

    def __init__(self, bags: Sequence[Bag], potential: CardinalityPotential, include_bias: bool):
        self.include_bias = include_bias
        self.dim = bags[0].dimension + int(include_bias)
        self.entries = []
        tables: dict[tuple[int, int], np.ndarray] = {}
        for bag in bags:
            m = bag.size
            for label in (POSITIVE, NEGATIVE):
                if (m, label) not in tables:
                    tables[m, label] = log_potential_table(potential, label, m)
            self.entries.append(
                (bag.id, design_matrix(bag.instances, include_bias), bag.label,
                 tables[m, POSITIVE], tables[m, NEGATIVE])
            )


def _bag_partitions(bag_id, X, theta, table_pos, table_neg):
    w = X @ theta
    counts = _counts_from_weights(w)
    lzp = _log_dot(table_pos, counts)
    lzn = _log_dot(table_neg, counts)
    if lzp == -np.inf and lzn == -np.inf:
        raise DegenerateModelError(
            f"bag {bag_id!r}: both bag-label partition functions are zero"
        )
    return w, lzp, lzn


def _regularizer(theta: np.ndarray, cfg: TrainConfig) -> float:
    if cfg.norm == "l2":
        return float(theta @ theta)
    return float(np.abs(theta).sum())


def _regularizer_grad(theta: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    if cfg.norm == "l2":
        return 2.0 * theta
    return np.sign(theta)


def _objective_at(prep: _Prepared, theta: np.ndarray, cfg: TrainConfig) -> float:
    total = 0.0
    for bag_id, X, label, tp, tn in prep.entries:
        _, lzp, lzn = _bag_partitions(bag_id, X, theta, tp, tn)
        lz_obs = lzp if label == POSITIVE else lzn
        if lz_obs == -np.inf:
            return -np.inf
        total += lz_obs - np.logaddexp(lzp, lzn)
    return total - cfg.lam * _regularizer(theta, cfg)


def _gradient_at(prep: _Prepared, theta: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    g = np.zeros(prep.dim)
    for bag_id, X, label, tp, tn in prep.entries:
        w, lzp, lzn = _bag_partitions(bag_id, X, theta, tp, tn)
        lz_obs = lzp if label == POSITIVE else lzn
        if lz_obs == -np.inf:
            raise ValueError(
                f"bag {bag_id!r}: gradient undefined where the observed label has zero probability"
            )
        post = _posterior_from_partitions(lzp, lzn)
        # observed-minus-unconditional collapses to (other-label posterior
        # weight) * (conditional difference); skip bags already certain
        other_weight = 1.0 - post if label == POSITIVE else post
        if other_weight == 0.0:
            continue
        table_obs, table_other = (tp, tn) if label == POSITIVE else (tn, tp)
        diff = _marginals_from_weights(w, table_obs) - _marginals_from_weights(w, table_other)
        g += other_weight * (X.T @ diff)
    return g - cfg.lam * _regularizer_grad(theta, cfg)


def objective(dataset, potential: CardinalityPotential, model: InstanceModel, cfg: TrainConfig) -> float:
    """Regularized log-likelihood of the dataset under ``model``."""
    bags = _as_bags(dataset)
    _check_labeled(bags)
    prep = _Prepared(bags, potential, model.include_bias)
    if model.weights.size != prep.dim:
        raise ValueError(f"model has {model.weights.size} weights, expected {prep.dim}")
    return _objective_at(prep, model.weights, cfg)


def gradient(dataset, potential: CardinalityPotential, model: InstanceModel, cfg: TrainConfig) -> np.ndarray:
    """Gradient of ``objective`` with respect to the weights."""
    bags = _as_bags(dataset)
    _check_labeled(bags)
    prep = _Prepared(bags, potential, model.include_bias)
    if model.weights.size != prep.dim:
        raise ValueError(f"model has {model.weights.size} weights, expected {prep.dim}")
    return _gradient_at(prep, model.weights, cfg)


def _initial_theta(dim: int, cfg: TrainConfig, seed: int) -> np.ndarray:
    if cfg.init_scale == 0.0:
        return np.zeros(dim)
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        return np.zeros(dim)
    radius = cfg.init_scale * rng.random() ** (1.0 / dim)
    return radius * direction / norm


def _ascend(prep: _Prepared, theta0: np.ndarray, cfg: TrainConfig, seed: int):
    theta = theta0.copy()
    f = _objective_at(prep, theta, cfg)
    report = TrainReport(
        final_objective=f, iterations=0, converged=False, restart_seed=seed
    )
    if not np.isfinite(f):
        report.message = "objective not finite at the initial point"
        return theta, report
    report.objective_history.append(f)
    for _ in range(cfg.max_iters):
        g = _gradient_at(prep, theta, cfg)
        grad_norm = float(np.max(np.abs(g)))
        report.grad_norm_history.append(grad_norm)
        if grad_norm <= cfg.grad_tol:
            report.converged = True
            break
        slope = float(g @ g)
        step = 1.0
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            candidate = theta + step * g
            fc = _objective_at(prep, candidate, cfg)
            if np.isfinite(fc) and fc >= f + _ARMIJO_SLOPE * step * slope:
                theta, f = candidate, fc
                accepted = True
                break
            step *= 0.5
        if not accepted:
            report.message = "line search could not find an ascent step"
            break
        report.iterations += 1
        report.objective_history.append(f)
    else:
        report.message = "reached max_iters before the gradient tolerance"
    report.final_objective = f
    return theta, report


def fit(dataset, potential: CardinalityPotential, cfg: TrainConfig) -> tuple[InstanceModel, TrainReport]:
    """Train instance weights by regularized maximum likelihood.

    Deterministic for a fixed config: initialization draws from a seeded
    generator and all reductions run in a fixed order.
    """
    bags = _as_bags(dataset)
    _check_labeled(bags)
    prep = _Prepared(bags, potential, cfg.include_bias)
    best = None
    for r in range(cfg.restarts):
        seed = cfg.seed + r
        theta0 = _initial_theta(prep.dim, cfg, seed)
        theta, report = _ascend(prep, theta0, cfg, seed)
        if best is None or report.final_objective > best[1].final_objective:
            best = (theta, report)
    theta, report = best
    return InstanceModel(theta, include_bias=cfg.include_bias), report
