"""Detection metrics and the clean + 8 degradation evaluation grid."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .degrade import BLUR, IDENTITY, JPEG, RESIZE, DegradationSpec, apply
from .errors import ParameterError
from .grad import softmax
from .head import HeadParams, head_forward
from .toyworld import extract_features

THRESHOLD = 0.5

# evaluation protocol; JPEG 90 is train-only
CONDITIONS = {
    "Clean": IDENTITY,
    "J70": DegradationSpec(JPEG, 70),
    "J50": DegradationSpec(JPEG, 50),
    "J30": DegradationSpec(JPEG, 30),
    "B1": DegradationSpec(BLUR, 1.0),
    "B2": DegradationSpec(BLUR, 2.0),
    "B3": DegradationSpec(BLUR, 3.0),
    "R.5": DegradationSpec(RESIZE, 0.5),
    "R.25": DegradationSpec(RESIZE, 0.25),
}
CONDITION_ORDER = tuple(CONDITIONS)
DEGRADED = CONDITION_ORDER[1:]
JPEG_CONDITIONS = ("J70", "J50", "J30")


def _check_pair(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0:
        raise ParameterError("metrics need at least one sample")
    if s.shape != y.shape:
        raise ParameterError(f"{s.size} scores but {y.size} labels")
    return s, y


def accuracy(scores, labels) -> float:
    """Fraction of samples where ``score >= 0.5`` agrees with ``label == 1``."""
    s, y = _check_pair(scores, labels)
    return float(np.mean((s >= THRESHOLD) == (y == 1)))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied fake/real pairs count one half."""
    s, y = _check_pair(scores, labels)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ParameterError("AUC needs both classes present")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class GridReport:
    """ACC/AUC per condition plus per-generator ACC, in protocol column order."""

    conditions: list
    acc: dict
    auc: dict
    per_generator: dict  # condition -> list of ACC, one per generator id
    n_generators: int
    meta: dict = field(default_factory=dict)

    @property
    def degraded_average(self) -> float:
        names = [c for c in self.conditions if c != "Clean"]
        return float(np.mean([self.acc[c] for c in names]))

    @property
    def degraded_auc_average(self) -> float:
        names = [c for c in self.conditions if c != "Clean"]
        return float(np.mean([self.auc[c] for c in names]))

    @property
    def jpeg_average(self) -> float:
        return float(np.mean([self.acc[c] for c in JPEG_CONDITIONS]))

    def to_dict(self) -> dict:
        return {
            "conditions": list(self.conditions),
            "acc": dict(self.acc),
            "auc": dict(self.auc),
            "per_generator": {k: list(v) for k, v in self.per_generator.items()},
            "n_generators": self.n_generators,
            "degraded_average": self.degraded_average,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridReport":
        return cls(
            conditions=list(d["conditions"]),
            acc=dict(d["acc"]),
            auc=dict(d["auc"]),
            per_generator={k: list(v) for k, v in d["per_generator"].items()},
            n_generators=int(d["n_generators"]),
            meta=dict(d.get("meta", {})),
        )


def predict_scores(params: HeadParams, features, forward=head_forward) -> np.ndarray:
    """Fake-class probability for each feature row, from one batched forward."""
    _, logits = forward(params, features)
    return softmax(logits)[:, 1]


def degradation_grid(params: HeadParams, dataset, extractor=extract_features, *,
                     conditions=CONDITION_ORDER, n_generators=None, forward=head_forward,
                     meta=None) -> GridReport:
    """Degrade every image under each condition and score it with the head."""
    labels = np.array([s.label for s in dataset])
    gens = np.array([s.generator_id for s in dataset])
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise ParameterError("evaluation set needs both classes")
    if n_generators is None:
        n_generators = int(gens.max()) + 1
    acc, auc_, per_gen = {}, {}, {}
    for name in conditions:
        spec = CONDITIONS[name]
        feats = np.stack([extractor(apply(spec, s.image)) for s in dataset])
        scores = predict_scores(params, feats, forward=forward)
        acc[name] = accuracy(scores, labels)
        auc_[name] = auc(scores, labels)
        per_gen[name] = [
            accuracy(scores[gens == g], labels[gens == g]) if np.any(gens == g) else float("nan")
            for g in range(n_generators)
        ]
    return GridReport(list(conditions), acc, auc_, per_gen, n_generators, dict(meta or {}))


def csv_header(n_generators: int) -> list:
    return ["condition", "acc", "auc"] + [f"gen{g}" for g in range(n_generators)]


def write_report(report: GridReport, path) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.json`` next to ``path``."""
    stem = Path(path)
    if stem.suffix in (".csv", ".json"):
        stem = stem.with_suffix("")
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    try:
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(csv_header(report.n_generators))
            for name in report.conditions:
                w.writerow([name, repr(report.acc[name]), repr(report.auc[name])]
                           + [repr(v) for v in report.per_generator[name]])
        json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {stem}: {exc.strerror or exc}") from exc
    return csv_path, json_path


def read_report(path) -> GridReport:
    return GridReport.from_dict(json.loads(Path(path).with_suffix(".json").read_text()))
