"""Command line interface.

Subcommands cover the full pipeline: synthesize data, train the instance
model, build Gram matrices, train and apply the SVM, verify inference
against the enumeration oracle, and benchmark the hot paths.  Every
file-producing run leaves a ``<output>.manifest.json`` recording the
configuration, seed, and input/output hashes; reruns with the same inputs
produce byte-identical outputs (timings live only in manifests).

Exit codes: 0 success, 1 verification or artifact-consistency failure,
2 usage error (bad flags, malformed inputs).
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import checks, data, kernels, metrics, svm, training
from .files import (
    ArtifactError,
    read_model_file,
    read_svm_file,
    write_manifest,
    write_model_file,
    write_scores_file,
    write_svm_file,
)
from .inference import DegenerateModelError
from .kernels import DegenerateBagError
from .model import NEGATIVE, POSITIVE, NormalPotential, RatioPotential, UniformPotential

_DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


class VerificationFailure(Exception):
    """A check ran to completion and failed."""


def _build_potential(args):
    kind = args.cardinality
    if kind == "normal":
        return NormalPotential(mu=args.mu, sigma=args.sigma)
    if kind == "ratio":
        return RatioPotential(rho=args.rho)
    if kind == "uniform":
        return UniformPotential()
    raise ValueError(f"unknown cardinality model {kind!r}")


def _build_kernel(args):
    if args.instance_kernel == "linear":
        return kernels.LinearKernel()
    if args.instance_kernel == "rbf":
        return kernels.RbfKernel(gamma=args.gamma)
    if args.instance_kernel == "hik":
        return kernels.HistogramIntersectionKernel()
    raise ValueError(f"unknown instance kernel {args.instance_kernel!r}")


def _require_labels(dataset):
    missing = [b.id for b in dataset.bags if b.label is None]
    if missing:
        raise ValueError(
            f"all bags must carry labels; missing on {len(missing)} bag(s), "
            f"first: {missing[:3]}"
        )
    return np.array([b.label for b in dataset.bags], dtype=np.int64)


def cmd_synth(args) -> int:
    started = time.time()
    cfg = data.SynthConfig(
        n_pos=args.n_pos,
        n_neg=args.n_neg,
        m_min=args.m_min,
        m_max=args.m_max,
        dimension=args.dimension,
        witness_rate=args.witness_rate,
        separation=args.separation,
        clutter_rate=args.clutter_rate,
        seed=args.seed,
    )
    dataset = data.generate(cfg)
    data.save(dataset, args.out)
    write_manifest(
        args.out, "synth", vars(args) | {"func": None}, args.seed,
        inputs={}, outputs={"dataset": args.out}, started=started,
    )
    print(f"wrote {len(dataset)} bags to {args.out}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    dataset = data.load(args.data)
    _require_labels(dataset)
    std = None
    if not args.no_standardize:
        std = data.fit_standardization(dataset)
        dataset = data.apply_standardization(dataset, std)
    potential = _build_potential(args)
    cfg = training.TrainConfig(
        lam=args.reg_lambda,
        norm=args.norm,
        max_iters=args.max_iters,
        grad_tol=args.grad_tol,
        init_scale=args.init_scale,
        seed=args.seed,
        restarts=args.restarts,
        include_bias=args.include_bias,
    )
    model, report = training.fit(dataset, potential, cfg)
    report_doc = {
        "final_objective": report.final_objective,
        "iterations": report.iterations,
        "converged": report.converged,
        "message": report.message,
        "restart_seed": report.restart_seed,
        "grad_norm_history": report.grad_norm_history,
        "objective_history": report.objective_history,
    }
    std_pair = (std.mean, std.scale) if std is not None else None
    fingerprint = write_model_file(args.out, model, potential, std_pair, report_doc)
    write_manifest(
        args.out, "train", vars(args) | {"func": None}, args.seed,
        inputs={"data": args.data}, outputs={"model": args.out}, started=started,
    )
    print(
        f"trained on {args.data}: objective {report.final_objective:.6f}, "
        f"{report.iterations} iterations, converged={report.converged}"
    )
    print(f"model {args.out} fingerprint {fingerprint}")
    return 0


def _standardized(dataset, artifact):
    if artifact.standardization is None:
        return dataset
    std = data.Standardization(*artifact.standardization)
    return data.apply_standardization(dataset, std)


def cmd_gram(args) -> int:
    started = time.time()
    dataset = data.load(args.data)
    artifact = read_model_file(args.model)
    dataset = _standardized(dataset, artifact)
    kind = _build_kernel(args)
    gram = kernels.gram(
        dataset,
        None if args.mi_kernel_mode else artifact.model,
        None if args.mi_kernel_mode else artifact.potential,
        kind,
        label_kind=args.label_kernel,
        mi_mode=args.mi_kernel_mode,
    )
    kernels.write_gram(gram, args.out)
    write_manifest(
        args.out, "gram", vars(args) | {"func": None}, None,
        inputs={"data": args.data, "model": args.model},
        outputs={"gram": args.out}, started=started,
    )
    print(f"wrote {gram.size}x{gram.size} Gram to {args.out} fingerprint {gram.fingerprint}")
    return 0


def _stratified_split(labels: np.ndarray, fraction: float, seed: int):
    """Deterministic per-class split; every class keeps at least one train bag."""
    rng = np.random.default_rng(seed)
    val_idx = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        take = min(int(round(members.size * fraction)), members.size - 1)
        val_idx.extend(members[:take].tolist())
    val = np.zeros(labels.size, dtype=bool)
    val[val_idx] = True
    return ~val, val


def _stratified_folds(labels: np.ndarray, folds: int, seed: int):
    rng = np.random.default_rng(seed)
    assignment = np.empty(labels.size, dtype=np.int64)
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        assignment[members] = np.arange(members.size) % folds
    return [(assignment != k, assignment == k) for k in range(folds)]


def _split_accuracy(values, labels, train_mask, eval_mask, C, tol) -> float:
    if len(np.unique(labels[train_mask])) < 2 or not eval_mask.any():
        return float("nan")
    sub = values[np.ix_(train_mask, train_mask)]
    model = svm.solve_dual(sub, labels[train_mask], C, tol)
    rows = values[np.ix_(eval_mask, train_mask)]
    scores = svm.decision_from_kernels(rows, model)
    predicted = np.where(scores > 0.0, POSITIVE, NEGATIVE)
    return metrics.accuracy(labels[eval_mask], predicted)


def _select_C(values, labels, grid, args):
    if len(grid) == 1:
        return grid[0], None
    results = []
    if args.folds and args.folds > 1:
        splits = _stratified_folds(labels, args.folds, args.seed)
    else:
        splits = [_stratified_split(labels, args.val_fraction, args.seed)]
    for C in grid:
        accs = [
            _split_accuracy(values, labels, tr, ev, C, args.tol) for tr, ev in splits
        ]
        accs = [a for a in accs if not np.isnan(a)]
        results.append(float(np.mean(accs)) if accs else float("-inf"))
    best = int(np.argmax(results))
    return grid[best], dict(zip(grid, results))


def cmd_svm_train(args) -> int:
    started = time.time()
    dataset = data.load(args.data)
    labels = _require_labels(dataset)
    try:
        gram = kernels.read_gram(args.gram, bag_ids=dataset.ids)
    except ValueError as exc:
        # a Gram that cannot bind to this dataset is an artifact mismatch,
        # not a usage error
        raise ArtifactError(str(exc)) from None
    if gram.size != len(dataset):
        raise ArtifactError(
            f"Gram is order {gram.size} but {args.data} has {len(dataset)} bags"
        )
    if gram.fingerprint:
        expected_data_part = kernels.gram_fingerprint(
            None, None, gram.kernel_kind, gram.label_kind, gram.mi_mode, dataset.ids
        ).split(".")[1]
        if gram.fingerprint.split(".")[1] != expected_data_part:
            raise ArtifactError(
                f"{args.gram}: Gram was built from different bags than {args.data}"
            )
    grid = tuple(args.C) if args.C else _DEFAULT_C_GRID
    best_C, selection = _select_C(gram.values, labels, grid, args)
    model = svm.solve_dual(gram, labels, best_C, args.tol)
    label_token = gram.label_kind + ("-mi" if gram.mi_mode else "")
    write_svm_file(
        args.out,
        bag_ids=model.bag_ids,
        labels=model.labels,
        alphas=model.alphas,
        bias=model.bias,
        C=best_C,
        gram_fingerprint=gram.fingerprint,
        model_fingerprint=args.model_fingerprint or "",
        kernel_token=kernels.kernel_token(gram.kernel_kind),
        label_token=label_token,
    )
    write_manifest(
        args.out, "svm-train", vars(args) | {"func": None}, args.seed,
        inputs={"gram": args.gram, "data": args.data},
        outputs={"svm": args.out}, started=started,
    )
    if selection:
        summary = ", ".join(f"C={c:g}: {a:.3f}" for c, a in selection.items())
        print(f"selection accuracy: {summary}")
    print(
        f"chose C={best_C:g}: {len(model.support_ids)} support bags, "
        f"{model.info.iterations} SMO steps, converged={model.info.converged}"
    )
    return 0


def cmd_predict(args) -> int:
    started = time.time()
    artifact = read_model_file(args.model)
    svm_doc = read_svm_file(args.svm)
    if svm_doc.model_fingerprint and svm_doc.model_fingerprint != artifact.fingerprint:
        raise ArtifactError(
            f"{args.svm} was trained against model fingerprint "
            f"{svm_doc.model_fingerprint}, but {args.model} has {artifact.fingerprint}"
        )
    test = data.load(args.data)
    train = data.load(args.train_data)
    missing = [bid for bid in svm_doc.bag_ids if bid not in set(train.ids)]
    if missing:
        raise ArtifactError(
            f"{args.train_data} lacks training bags referenced by {args.svm}: {missing[:3]}"
        )
    test_std = _standardized(test, artifact)
    train_std = _standardized(train, artifact)
    mi_mode = svm_doc.label_token.endswith("-mi")
    label_kind = svm_doc.label_token[:-3] if mi_mode else svm_doc.label_token
    kind = kernels.parse_kernel_token(svm_doc.kernel_token)
    svm_model = svm.SvmModel(
        bag_ids=svm_doc.bag_ids,
        labels=svm_doc.labels,
        alphas=svm_doc.alphas,
        bias=svm_doc.bias,
        C=svm_doc.C,
        gram_fingerprint=svm_doc.gram_fingerprint,
    )
    scores = svm.predict_scores(
        test_std, train_std, svm_model,
        None if mi_mode else artifact.model,
        None if mi_mode else artifact.potential,
        kind, label_kind, mi_mode,
    )
    rows = [(b.id, float(s), b.label) for b, s in zip(test_std.bags, scores)]
    write_scores_file(args.out, rows)
    write_manifest(
        args.out, "predict", vars(args) | {"func": None}, None,
        inputs={"data": args.data, "train_data": args.train_data,
                "model": args.model, "svm": args.svm},
        outputs={"scores": args.out}, started=started,
    )
    print(f"wrote {len(rows)} scores to {args.out}")
    labels = [b.label for b in test_std.bags]
    if all(lab is not None for lab in labels):
        truth = np.array(labels)
        predicted = np.where(scores > 0.0, POSITIVE, NEGATIVE)
        print(f"accuracy {metrics.accuracy(truth, predicted):.4f}")
        if (truth == POSITIVE).any():
            print(f"average_precision {metrics.average_precision(truth, scores):.4f}")
    return 0


def cmd_oracle_check(args) -> int:
    report = checks.run_oracle_check(
        trials=args.trials,
        max_m=args.max_m,
        seed=args.seed,
        inject_fault=args.inject_fault,
    )
    grad_report = checks.run_gradient_check(
        datasets=args.grad_datasets,
        seed=args.seed,
        inject_fault=args.inject_fault,
    )
    text = "\n".join(report.lines() + grad_report.lines())
    print(text)
    if args.out:
        started = time.time()
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        write_manifest(
            args.out, "oracle-check", vars(args) | {"func": None}, args.seed,
            inputs={}, outputs={"report": args.out}, started=started,
        )
    if not (report.passed and grad_report.passed):
        raise VerificationFailure("oracle check failed; see report above")
    return 0


def cmd_bench(args) -> int:
    started = time.time()
    sizes = tuple(int(v) for v in args.m)
    rows = checks.run_bench(
        sizes=sizes, dimension=args.dimension, seed=args.seed, repeats=args.repeats
    )
    lines = ["op,m,d,seconds"]
    lines += [f"{op},{m},{d},{sec:.9f}" for op, m, d, sec in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        write_manifest(
            args.out, "bench", vars(args) | {"func": None}, args.seed,
            inputs={}, outputs={"bench": args.out}, started=started,
        )
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        print(text, end="")
    if args.large_bag:
        info = checks.large_bag_smoke(m=args.large_bag, dimension=args.dimension, seed=args.seed)
        print(
            f"large bag m={info['m']}: {info['seconds']:.1f}s, "
            f"finite={info['marginals_finite']}, in_unit={info['marginals_in_unit']}"
        )
    return 0


def _add_potential_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cardinality", choices=("normal", "ratio", "uniform"),
                   default="normal", help="cardinality model family")
    p.add_argument("--mu", type=float, default=1.0,
                   help="normal: preferred positive fraction (default 1.0)")
    p.add_argument("--sigma", type=float, default=0.1,
                   help="normal: tolerance around the preferred fraction")
    p.add_argument("--rho", type=float, default=0.5,
                   help="ratio: minimum positive fraction for a positive bag")


def _add_kernel_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instance-kernel", choices=("linear", "rbf", "hik"),
                   default="linear")
    p.add_argument("--gamma", type=float, default=0.5, help="rbf bandwidth")
    p.add_argument("--label-kernel", choices=kernels.LABEL_KINDS, default="positive")
    p.add_argument("--mi-kernel-mode", action="store_true",
                   help="force every instance marginal to one (model-free baseline)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cardmil",
        description="Multi-instance learning with cardinality potentials.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n-pos", type=int, default=50)
    p.add_argument("--n-neg", type=int, default=50)
    p.add_argument("--m-min", type=int, default=5)
    p.add_argument("--m-max", type=int, default=15)
    p.add_argument("--dimension", type=int, default=10)
    p.add_argument("--witness-rate", type=float, default=0.3)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--clutter-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the instance model by maximum likelihood")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_potential_flags(p)
    p.add_argument("--lambda", dest="reg_lambda", type=float, default=1e-3,
                   help="regularization strength")
    p.add_argument("--norm", choices=("l1", "l2"), default="l2")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--grad-tol", type=float, default=1e-4)
    p.add_argument("--init-scale", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--include-bias", action="store_true")
    p.add_argument("--no-standardize", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gram", help="build a normalized bag-kernel Gram matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _add_kernel_flags(p)
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("svm-train", help="train the bag SVM on a Gram matrix")
    p.add_argument("--gram", required=True)
    p.add_argument("--data", required=True, help="dataset the Gram was built from (for labels)")
    p.add_argument("--out", required=True)
    p.add_argument("--C", type=float, action="append",
                   help="candidate C (repeatable; default grid 0.01..100)")
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--folds", type=int, default=0,
                   help="use stratified k-fold selection instead of one split")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-fingerprint", default="",
                   help="fingerprint of the instance model, stored for predict-time checks")
    p.set_defaults(func=cmd_svm_train)

    p = sub.add_parser("predict", help="score bags with a trained SVM")
    p.add_argument("--data", required=True)
    p.add_argument("--train-data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--svm", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("oracle-check", help="verify inference against enumeration")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--max-m", type=int, default=12)
    p.add_argument("--grad-datasets", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true",
                   help="perturb the tested path to prove failures are caught")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("bench", help="time the inference and kernel hot paths")
    p.add_argument("--m", type=int, nargs="+", default=[512, 1024, 2048, 4096])
    p.add_argument("--dimension", type=int, default=8)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--large-bag", type=int, default=0,
                   help="also run one pass at this bag size")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (VerificationFailure, DegenerateModelError, DegenerateBagError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
