"""On-disk artifact formats: model files, SVM files, score files, manifests.

All JSON artifacts serialize floats through ``repr``-level round-tripping
(json keeps shortest-exact float text), so a write/read cycle is bit-exact.
-inf entries in tabular potentials ride on JSON's Infinity extension, which
``json.loads`` accepts back.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from typing import Any

import numpy as np

from .model import (
    CardinalityPotential,
    InstanceModel,
    NormalPotential,
    RatioPotential,
    TabularPotential,
    UniformPotential,
)

MODEL_FORMAT = "cardmil-model-v1"
SVM_FORMAT = "cardmil-svm-v1"


class ArtifactError(ValueError):
    """An artifact file is malformed or inconsistent with its companions."""


def potential_to_doc(potential: CardinalityPotential) -> dict:
    if isinstance(potential, NormalPotential):
        return {"kind": "normal", "mu": potential.mu, "sigma": potential.sigma}
    if isinstance(potential, RatioPotential):
        return {"kind": "ratio", "rho": potential.rho}
    if isinstance(potential, UniformPotential):
        return {"kind": "uniform"}
    if isinstance(potential, TabularPotential):
        return {
            "kind": "tabular",
            "log_pos": [float(v) for v in potential.log_pos],
            "log_neg": [float(v) for v in potential.log_neg],
        }
    raise TypeError(f"unknown cardinality potential {type(potential).__name__}")


def potential_from_doc(doc: dict) -> CardinalityPotential:
    kind = doc.get("kind")
    if kind == "normal":
        return NormalPotential(float(doc["mu"]), float(doc["sigma"]))
    if kind == "ratio":
        return RatioPotential(float(doc["rho"]))
    if kind == "uniform":
        return UniformPotential()
    if kind == "tabular":
        return TabularPotential(np.array(doc["log_pos"]), np.array(doc["log_neg"]))
    raise ArtifactError(f"unknown potential kind {kind!r}")


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def model_fingerprint_doc(doc: dict) -> str:
    """Fingerprint of a model file's identity-bearing fields."""
    core = {k: doc.get(k) for k in ("weights", "include_bias", "cardinality", "standardization")}
    return hashlib.sha256(canonical_json(core).encode()).hexdigest()[:16]


@dataclass
class ModelArtifact:
    """A trained instance model with everything needed to reuse it."""

    model: InstanceModel
    potential: CardinalityPotential
    standardization: tuple[np.ndarray, np.ndarray] | None
    fingerprint: str
    train_report: dict | None = None


def write_model_file(
    path,
    model: InstanceModel,
    potential: CardinalityPotential,
    standardization=None,
    train_report: dict | None = None,
) -> str:
    """Write a model artifact; returns its fingerprint."""
    std_doc = None
    if standardization is not None:
        mean, scale = standardization
        std_doc = {"mean": [float(v) for v in mean], "scale": [float(v) for v in scale]}
    doc = {
        "format": MODEL_FORMAT,
        "weights": [float(v) for v in model.weights],
        "include_bias": model.include_bias,
        "cardinality": potential_to_doc(potential),
        "standardization": std_doc,
        "train_report": train_report,
    }
    doc["fingerprint"] = model_fingerprint_doc(doc)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return doc["fingerprint"]


def read_model_file(path) -> ModelArtifact:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ArtifactError(f"{path}: not a {MODEL_FORMAT} file")
    expected = model_fingerprint_doc(doc)
    stored = doc.get("fingerprint")
    if stored != expected:
        raise ArtifactError(f"{path}: fingerprint mismatch (file edited or truncated?)")
    model = InstanceModel(np.array(doc["weights"]), include_bias=bool(doc["include_bias"]))
    potential = potential_from_doc(doc["cardinality"])
    std = None
    if doc.get("standardization") is not None:
        std = (
            np.array(doc["standardization"]["mean"]),
            np.array(doc["standardization"]["scale"]),
        )
    return ModelArtifact(
        model=model,
        potential=potential,
        standardization=std,
        fingerprint=stored,
        train_report=doc.get("train_report"),
    )


@dataclass
class SvmArtifact:
    bag_ids: tuple[str, ...]
    labels: np.ndarray
    alphas: np.ndarray
    bias: float
    C: float
    gram_fingerprint: str
    model_fingerprint: str
    kernel_token: str
    label_token: str


def write_svm_file(
    path,
    *,
    bag_ids,
    labels,
    alphas,
    bias,
    C,
    gram_fingerprint,
    model_fingerprint,
    kernel_token,
    label_token,
) -> None:
    doc = {
        "format": SVM_FORMAT,
        "bag_ids": list(bag_ids),
        "labels": [int(v) for v in labels],
        "alphas": [float(v) for v in alphas],
        "bias": float(bias),
        "C": float(C),
        "gram_fingerprint": gram_fingerprint,
        "model_fingerprint": model_fingerprint,
        "kernel": kernel_token,
        "label_kernel": label_token,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_svm_file(path) -> SvmArtifact:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != SVM_FORMAT:
        raise ArtifactError(f"{path}: not a {SVM_FORMAT} file")
    n = len(doc["bag_ids"])
    if len(doc["labels"]) != n or len(doc["alphas"]) != n:
        raise ArtifactError(f"{path}: labels/alphas length does not match bag_ids")
    return SvmArtifact(
        bag_ids=tuple(doc["bag_ids"]),
        labels=np.array(doc["labels"], dtype=np.int64),
        alphas=np.array(doc["alphas"], dtype=np.float64),
        bias=float(doc["bias"]),
        C=float(doc["C"]),
        gram_fingerprint=doc["gram_fingerprint"],
        model_fingerprint=doc["model_fingerprint"],
        kernel_token=doc["kernel"],
        label_token=doc["label_kernel"],
    )


def write_scores_file(path, rows) -> None:
    """Rows of (bag_id, score, label-or-None), written sorted by bag id."""
    with open(path, "w", encoding="utf-8") as fh:
        for bag_id, score, label in sorted(rows, key=lambda r: r[0]):
            label_text = "?" if label is None else f"{label:+d}"
            fh.write(f"{bag_id} {format(score, '.17g')} {label_text}\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path, command: str, config: dict, seed, inputs: dict, outputs: dict, started: float) -> str:
    """Write ``<out_path>.manifest.json`` describing one CLI run."""
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {name: file_sha256(p) for name, p in inputs.items()},
        "outputs": {name: file_sha256(p) for name, p in outputs.items()},
        "timings": {"seconds": time.time() - started},
    }
    path = f"{out_path}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path
