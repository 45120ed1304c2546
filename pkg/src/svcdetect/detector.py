"""Two-layer hierarchical service detection.

Layer 1 assigns every gated conversation to CG, RT or NRT. Layer 2 refines
the call: RT conversations go to a 3-class model (MG/VC/AC), NRT ones to a
2-class model (FD/VS), and CG conversations stop at layer 1. Exactly one
L2 model runs for a non-CG conversation and zero for CG, so an L2 mistake
can never leak into the L1 answer.

Per step, all conversation predictions are collected into a category map,
which folds into the stream-level multi-label output: three booleans in
fixed order (cg, rt, nrt), each true iff some conversation carries that
class this step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from . import gbdt
from .taxonomy import L1_CLASSES, L2_NRT_CLASSES, L2_RT_CLASSES, is_legal_pair
from .traffic import ConversationKey
from .windows import InputVector


class ConfigurationError(Exception):
    """Bundle wiring is wrong (missing model, class-order mismatch, ...)."""


@dataclass(frozen=True)
class ServicePrediction:
    """One conversation's verdict: L1 class, optional sub-class, probabilities."""

    l1: str
    sub: str | None
    l1_proba: np.ndarray
    l2_proba: np.ndarray | None

    def __post_init__(self) -> None:
        if not is_legal_pair(self.l1, self.sub):
            raise ValueError(f"illegal class pair ({self.l1}, {self.sub})")


# Per-step mapping from conversation to its prediction.
CategoryMap = dict[ConversationKey, ServicePrediction]


class MultiLabelOutput(NamedTuple):
    """Stream-level presence flags, fixed field order."""

    cg: bool
    rt: bool
    nrt: bool


@dataclass(frozen=True)
class DetectorBundle:
    """The three trained models. Immutable; shareable across conversations."""

    l1: gbdt.GbdtModel
    l2_rt: gbdt.GbdtModel
    l2_nrt: gbdt.GbdtModel

    def __post_init__(self) -> None:
        checks = (
            (self.l1, L1_CLASSES, "l1"),
            (self.l2_rt, L2_RT_CLASSES, "l2_rt"),
            (self.l2_nrt, L2_NRT_CLASSES, "l2_nrt"),
        )
        for model, expected, name in checks:
            if model.class_labels != expected:
                raise ConfigurationError(
                    f"{name} model class order {model.class_labels} != {expected}"
                )
        counts = {self.l1.feature_count, self.l2_rt.feature_count,
                  self.l2_nrt.feature_count}
        if len(counts) != 1:
            raise ConfigurationError(f"models disagree on feature count: {counts}")

    @property
    def feature_count(self) -> int:
        return self.l1.feature_count


def detect(bundle: DetectorBundle, v: InputVector | np.ndarray) -> ServicePrediction:
    """Classify one input vector through the L1 gate and the routed L2 model."""
    values = v.values if isinstance(v, InputVector) else np.asarray(v, dtype=np.float64)
    l1_proba = gbdt.predict_proba(bundle.l1, values)
    l1 = bundle.l1.class_labels[int(np.argmax(l1_proba))]
    sub = None
    l2_proba = None
    if l1 == "RT":
        l2_proba = gbdt.predict_proba(bundle.l2_rt, values)
        sub = bundle.l2_rt.class_labels[int(np.argmax(l2_proba))]
    elif l1 == "NRT":
        l2_proba = gbdt.predict_proba(bundle.l2_nrt, values)
        sub = bundle.l2_nrt.class_labels[int(np.argmax(l2_proba))]
    return ServicePrediction(l1=l1, sub=sub, l1_proba=l1_proba, l2_proba=l2_proba)


def step_output(cmap: Mapping[ConversationKey, ServicePrediction]) -> MultiLabelOutput:
    """OR the category map down to the per-step (cg, rt, nrt) triple."""
    present = {pred.l1 for pred in cmap.values()}
    return MultiLabelOutput(
        cg="CG" in present,
        rt="RT" in present,
        nrt="NRT" in present,
    )


# --------------------------------------------------------------------------
# Bundle manifest: paths of the three models plus their expected class order
# --------------------------------------------------------------------------

_BUNDLE_PARTS = (
    ("l1", L1_CLASSES),
    ("l2_rt", L2_RT_CLASSES),
    ("l2_nrt", L2_NRT_CLASSES),
)


def write_bundle_manifest(path: str | Path,
                          model_paths: Mapping[str, str | Path]) -> None:
    """Write a bundle manifest next to the models it references."""
    path = Path(path)
    doc = {
        name: {
            "path": str(Path(model_paths[name])),
            "classes": list(expected),
        }
        for name, expected in _BUNDLE_PARTS
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_bundle(path: str | Path) -> DetectorBundle:
    """Load the three models named by a manifest, validating class orders.

    Relative model paths resolve against the manifest's directory. Any
    mismatch (missing entry, wrong classes, unequal feature counts) raises
    ConfigurationError here, never mid-stream.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read bundle manifest {path}: {exc}") from exc

    models: dict[str, gbdt.GbdtModel] = {}
    for name, expected in _BUNDLE_PARTS:
        entry = doc.get(name)
        if not isinstance(entry, dict) or "path" not in entry:
            raise ConfigurationError(f"bundle manifest missing entry for {name!r}")
        declared = tuple(entry.get("classes", ()))
        if declared != expected:
            raise ConfigurationError(
                f"manifest declares {name} classes {declared}, expected {expected}"
            )
        model_path = Path(entry["path"])
        if not model_path.is_absolute():
            model_path = path.parent / model_path
        try:
            model = gbdt.load_model(model_path)
        except (OSError, gbdt.ModelError) as exc:
            raise ConfigurationError(f"cannot load {name} model: {exc}") from exc
        models[name] = model
    return DetectorBundle(l1=models["l1"], l2_rt=models["l2_rt"],
                          l2_nrt=models["l2_nrt"])
