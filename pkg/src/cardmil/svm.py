"""Soft-margin SVM dual solver over precomputed Gram matrices.

Sequential minimal optimization with maximal-violating-pair working-set
selection: each step picks the most violating (up, low) index pair under
the box and equality constraints, solves the two-variable subproblem in
closed form, and maintains the dual gradient incrementally.  Selection
ties break to the lowest index, so runs are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernels import GramMatrix, cross_gram
from .model import NEGATIVE, POSITIVE, Bag

_ETA_FLOOR = 1e-12
_EIG_TOLERANCE = 1e-8


@dataclass
class SolveInfo:
    """Diagnostics from one ``solve_dual`` call."""

    iterations: int
    kkt_violation: float
    dual_objective: float
    converged: bool
    dual_objective_history: list[float] = field(default_factory=list)


@dataclass
class SvmModel:
    """Dual solution over training bags, in Gram row order."""

    bag_ids: tuple[str, ...]
    labels: np.ndarray
    alphas: np.ndarray
    bias: float
    C: float
    gram_fingerprint: str = ""
    info: SolveInfo | None = None

    def support_mask(self) -> np.ndarray:
        return self.alphas > 1e-12 * max(1.0, self.C)

    @property
    def support_ids(self) -> tuple[str, ...]:
        mask = self.support_mask()
        return tuple(bid for bid, keep in zip(self.bag_ids, mask) if keep)


def _gram_values(gram) -> tuple[np.ndarray, tuple[str, ...], str]:
    if isinstance(gram, GramMatrix):
        return gram.values, gram.bag_ids, gram.fingerprint
    values = np.asarray(gram, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("Gram must be a square matrix")
    return values, tuple(str(i) for i in range(values.shape[0])), ""


def _prepare_kernel(values: np.ndarray) -> np.ndarray:
    """Validate positive semidefiniteness; absorb roundoff-scale deficits."""
    eig_min = float(np.linalg.eigvalsh(values).min())
    if eig_min < -_EIG_TOLERANCE:
        raise ValueError(
            f"Gram matrix is not positive semidefinite: min eigenvalue {eig_min:.3e}"
        )
    if eig_min < 0.0:
        values = values + _EIG_TOLERANCE * np.eye(values.shape[0])
    return values


def solve_dual(gram, labels, C: float, tol: float = 1e-3, max_iter: int = 200_000) -> SvmModel:
    """Solve the dual soft-margin problem on a precomputed Gram matrix.

    Stops when the maximal KKT violation drops to ``tol``.  Returns the
    model with a ``SolveInfo`` attached; the dual objective history has one
    entry per SMO step and is non-decreasing.
    """
    values, bag_ids, fingerprint = _gram_values(gram)
    y = np.asarray(labels, dtype=np.float64).ravel()
    n = values.shape[0]
    if y.size != n:
        raise ValueError(f"{y.size} labels for an order-{n} Gram")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    if POSITIVE not in y or NEGATIVE not in y:
        raise ValueError("training requires both classes")
    if not (C > 0.0) or not np.isfinite(C):
        raise ValueError(f"C must be positive and finite, got {C!r}")
    if not (tol > 0.0):
        raise ValueError("tol must be positive")

    K = _prepare_kernel(values)
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of (1/2) a'Qa - e'a
    bound_eps = 1e-12 * max(1.0, C)
    history: list[float] = []
    dual = 0.0
    iterations = 0
    converged = False
    violation = np.inf

    while iterations < max_iter:
        v = -y * G
        at_upper = alpha >= C - bound_eps
        at_lower = alpha <= bound_eps
        up_mask = ((y > 0) & ~at_upper) | ((y < 0) & ~at_lower)
        low_mask = ((y < 0) & ~at_upper) | ((y > 0) & ~at_lower)
        if not up_mask.any() or not low_mask.any():
            violation = 0.0
            converged = True
            break
        i = int(np.argmax(np.where(up_mask, v, -np.inf)))
        j = int(np.argmin(np.where(low_mask, v, np.inf)))
        violation = float(v[i] - v[j])
        if violation <= tol:
            converged = True
            break

        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta < _ETA_FLOOR:
            eta = _ETA_FLOOR
        # errors E_t = f(x_t) - y_t relate to the dual gradient by E = yG
        delta = y[j] * (y[i] * G[i] - y[j] * G[j]) / eta
        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            low = max(0.0, aj_old - ai_old)
            high = min(C, C + aj_old - ai_old)
        else:
            low = max(0.0, ai_old + aj_old - C)
            high = min(C, ai_old + aj_old)
        aj_new = min(max(aj_old + delta, low), high)
        ai_new = ai_old + y[i] * y[j] * (aj_old - aj_new)
        ai_new = min(max(ai_new, 0.0), C)
        dai = ai_new - ai_old
        daj = aj_new - aj_old
        dual -= (
            G[i] * dai
            + G[j] * daj
            + 0.5 * (Q[i, i] * dai * dai + 2.0 * Q[i, j] * dai * daj + Q[j, j] * daj * daj)
        )
        history.append(dual)
        G += Q[:, i] * dai + Q[:, j] * daj
        alpha[i] = ai_new
        alpha[j] = aj_new
        iterations += 1

    v = -y * G
    free = (alpha > bound_eps) & (alpha < C - bound_eps)
    if free.any():
        bias = float(v[free].mean())
    else:
        at_upper = alpha >= C - bound_eps
        at_lower = alpha <= bound_eps
        up_mask = ((y > 0) & ~at_upper) | ((y < 0) & ~at_lower)
        low_mask = ((y < 0) & ~at_upper) | ((y > 0) & ~at_lower)
        hi = float(np.max(v[up_mask])) if up_mask.any() else 0.0
        lo = float(np.min(v[low_mask])) if low_mask.any() else 0.0
        bias = 0.5 * (hi + lo)

    info = SolveInfo(
        iterations=iterations,
        kkt_violation=float(max(violation, 0.0)),
        dual_objective=float(alpha.sum() - 0.5 * (alpha @ (Q @ alpha))),
        converged=converged,
        dual_objective_history=history,
    )
    return SvmModel(
        bag_ids=bag_ids,
        labels=y.astype(np.int64),
        alphas=alpha,
        bias=bias,
        C=C,
        gram_fingerprint=fingerprint,
        info=info,
    )


def decision_from_kernels(kernel_rows: np.ndarray, model: SvmModel) -> np.ndarray:
    """Decision scores given precomputed normalized kernels to all training bags."""
    rows = np.atleast_2d(np.asarray(kernel_rows, dtype=np.float64))
    if rows.shape[1] != model.alphas.size:
        raise ValueError(
            f"kernel rows have {rows.shape[1]} columns, model has {model.alphas.size} training bags"
        )
    return rows @ (model.alphas * model.labels) + model.bias


def _index_bags(dataset) -> dict[str, Bag]:
    bags = list(dataset.bags) if hasattr(dataset, "bags") else list(dataset)
    return {b.id: b for b in bags}


def _support_bags(train_dataset, model: SvmModel):
    by_id = _index_bags(train_dataset)
    missing = [bid for bid in model.bag_ids if bid not in by_id]
    if missing:
        raise ValueError(f"training bags not found in the dataset: {missing[:5]}")
    mask = model.support_mask()
    idx = np.flatnonzero(mask)
    bags = [by_id[model.bag_ids[k]] for k in idx]
    return bags, idx


def predict_scores(
    test_dataset,
    train_dataset,
    svm_model: SvmModel,
    instance_model,
    potential,
    kind,
    label_kind: str = "positive",
    mi_mode: bool = False,
) -> np.ndarray:
    """Decision scores for every test bag, using support bags only."""
    support, idx = _support_bags(train_dataset, svm_model)
    test_bags = list(test_dataset.bags) if hasattr(test_dataset, "bags") else list(test_dataset)
    if not support:
        return np.full(len(test_bags), svm_model.bias)
    rows = cross_gram(
        test_bags, support, instance_model, potential, kind, label_kind, mi_mode
    )
    coef = svm_model.alphas[idx] * svm_model.labels[idx]
    return rows @ coef + svm_model.bias


def decision(
    test_bag: Bag,
    train_dataset,
    svm_model: SvmModel,
    instance_model,
    potential,
    kind,
    label_kind: str = "positive",
    mi_mode: bool = False,
) -> float:
    """Decision score for a single bag."""
    return float(
        predict_scores(
            [test_bag], train_dataset, svm_model, instance_model, potential, kind,
            label_kind, mi_mode,
        )[0]
    )


@dataclass
class OneVsAllModel:
    """One binary model per class, trained class-versus-rest."""

    classes: tuple
    models: tuple[SvmModel, ...]


def one_vs_all_train(
    grams,
    class_labels: Sequence,
    C: float,
    tol: float = 1e-3,
    classes: Sequence | None = None,
) -> OneVsAllModel:
    """Train K class-versus-rest models.

    ``grams`` is a single GramMatrix shared by every class, or a sequence of
    K matrices (one per class model, e.g. per-class instance models).
    """
    labels = list(class_labels)
    if classes is None:
        classes = sorted(set(labels))
    else:
        classes = list(classes)
    if len(classes) < 2:
        raise ValueError("one-vs-all needs at least two classes")
    for cls in classes:
        if cls not in labels:
            raise ValueError(f"class {cls!r} has no training bags")
    if isinstance(grams, (GramMatrix, np.ndarray)):
        gram_list = [grams] * len(classes)
    else:
        gram_list = list(grams)
        if len(gram_list) != len(classes):
            raise ValueError(f"expected {len(classes)} Gram matrices, got {len(gram_list)}")
    models = []
    for cls, g in zip(classes, gram_list):
        y = np.where(np.array([lab == cls for lab in labels]), POSITIVE, NEGATIVE)
        models.append(solve_dual(g, y, C, tol))
    return OneVsAllModel(classes=tuple(classes), models=tuple(models))


def one_vs_all_predict(kernel_rows, model: OneVsAllModel):
    """Predict classes by the highest per-class decision score.

    ``kernel_rows`` is one (T, N) matrix shared by all classes or a sequence
    of K matrices.  Ties go to the earliest class in ``model.classes``.

    Returns
    -------
    predictions : list of class labels, length T
    scores : (T, K) array of decision values
    """
    if isinstance(kernel_rows, np.ndarray):
        row_list = [kernel_rows] * len(model.classes)
    else:
        row_list = list(kernel_rows)
        if len(row_list) != len(model.classes):
            raise ValueError(f"expected {len(model.classes)} kernel matrices")
    scores = np.column_stack([
        decision_from_kernels(rows, m) for rows, m in zip(row_list, model.models)
    ])
    winners = np.argmax(scores, axis=1)
    predictions = [model.classes[k] for k in winners]
    return predictions, scores
