"""Patient-grouped k-fold cross-validation, confusion metrics and the experiment grid."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyMatrix, FoldClassMissing, LeakageDetected, TooFewGroups
from .pipeline import PipelineSpec, fit_pipeline
from .select import SelectionConfig
from .stats import FeatureMatrix

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[np.ndarray, ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_test(self, i: int):
        test = self.folds[i]
        train = np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))
        return train, test


def grouped_kfold_split(groups, k: int = 3, seed: int = 0) -> FoldPlan:
    """Shuffle distinct patients with ``seed`` and deal them round-robin into k folds."""
    groups = list(groups)
    patients = sorted(set(groups))
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(patients) < k:
        raise TooFewGroups(f"{len(patients)} patients cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(patients))
    fold_of = {patients[p]: i % k for i, p in enumerate(order)}
    assign = np.array([fold_of[g] for g in groups])
    return FoldPlan(tuple(np.flatnonzero(assign == f) for f in range(k)), seed)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)), int(np.sum(t & ~p)))

    def __add__(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def metrics_from_confusion(cm: ConfusionMatrix) -> dict:
    """Accuracy, precision, recall and F1.  Undefined ratios are 0 and flagged."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    acc = (cm.tp + cm.tn) / cm.total
    p_undef = cm.tp + cm.fp == 0
    r_undef = cm.tp + cm.fn == 0
    precision = 0.0 if p_undef else cm.tp / (cm.tp + cm.fp)
    recall = 0.0 if r_undef else cm.tp / (cm.tp + cm.fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return {
        "accuracy": acc,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "precision_undefined": p_undef,
        "recall_undefined": r_undef,
    }


@dataclass
class Audit:
    """Which rows each fold's fitting stages touched."""

    records: list[dict] = field(default_factory=list)

    def record(self, fold: int, stage: str, rows) -> None:
        self.records.append({"fold": fold, "stage": stage, "rows": sorted(int(r) for r in rows)})

    def verify(self, plan: FoldPlan) -> None:
        for f in range(plan.k):
            stages = {r["stage"] for r in self.records if r["fold"] == f}
            if stages != set(FIT_STAGES):
                raise LeakageDetected(f"fold {f}: fit stages {sorted(stages)} not all recorded")
        for rec in self.records:
            train, test = plan.train_test(rec["fold"])
            rows = set(rec["rows"])
            if rows & set(test.tolist()) or rows != set(train.tolist()):
                raise LeakageDetected(f"fold {rec['fold']} stage {rec['stage']} touched non-training rows")

    def to_text(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"


FIT_STAGES = ("scaler_fit", "selection_fit", "model_train")


def fold_seeds(seed: int, fold: int) -> tuple[int, int, int]:
    """(selection, model init, training) seeds for one fold."""
    s = np.random.SeedSequence([seed, fold]).generate_state(3)
    return int(s[0]), int(s[1]), int(s[2])


@dataclass
class CvReport:
    descriptor: dict
    folds: list[dict]
    mean: dict
    pooled: dict
    seed: int
    audit: Audit = field(default_factory=Audit)

    @property
    def accuracy(self) -> float:
        return self.mean["accuracy"]

    @property
    def f1(self) -> float:
        return self.mean["f1"]

    def to_dict(self) -> dict:
        return {
            "descriptor": self.descriptor,
            "seed": self.seed,
            "folds": self.folds,
            "mean": self.mean,
            "pooled": self.pooled,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def run_cv(data: FeatureMatrix, pipeline: PipelineSpec = PipelineSpec(), k: int = 3, seed: int = 0,
           name: str = "") -> CvReport:
    """k-fold CV with patient-disjoint folds; all fitting sees training rows only."""
    plan = grouped_kfold_split(data.groups, k, seed)
    audit = Audit()
    folds = []
    pooled_cm = ConfusionMatrix(0, 0, 0, 0)
    for i in range(plan.k):
        train_idx, test_idx = plan.train_test(i)
        if np.unique(data.y[train_idx]).size < 2:
            raise FoldClassMissing(f"fold {i}: training split holds a single class")
        s_sel, s_init, s_train = fold_seeds(seed, i)
        fitted = fit_pipeline(
            data.rows(train_idx), pipeline, model_seed=s_init, train_seed=s_train, selection_seed=s_sel,
            on_fit=lambda stage, rows, fold=i: audit.record(fold, stage, data.row_index_position(rows)),
        )
        y_pred, _ = fitted.predict(data.X[test_idx])
        cm = ConfusionMatrix.from_labels(data.y[test_idx], y_pred)
        pooled_cm = pooled_cm + cm
        folds.append({
            "fold": i,
            "n_train": int(train_idx.size),
            "n_test": int(test_idx.size),
            "n_model_inputs": int(fitted.selection.n_outputs),
            "selected": fitted.selection.selected_names,
            "confusion": {"tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn},
            "metrics": metrics_from_confusion(cm),
            "final_train_loss": float(fitted.history[-1]),
        })
    audit.verify(plan)
    mean = {m: float(np.mean([f["metrics"][m] for f in folds])) for m in METRIC_NAMES}
    descriptor = {
        "name": name,
        "model": pipeline.model,
        "selection": pipeline.selection.method,
        "n_columns": data.d,
        "k": k,
    }
    return CvReport(descriptor, folds, mean, metrics_from_confusion(pooled_cm), seed, audit)


# --------------------------------------------------------------------------- #
# Experiment grid: {cnn, dnn} x {all, rf23, pca, corr8}
# --------------------------------------------------------------------------- #

FEATURE_SETS = ("all", "rf23", "pca", "corr8")
MODELS = ("cnn", "dnn")


def feature_set_selection(name: str, base: SelectionConfig = SelectionConfig()) -> SelectionConfig:
    if name == "all":
        return replace(base, method="none")
    if name == "rf23":
        return replace(base, method="rf", k=23)
    if name == "pca":
        return replace(base, method="pca", k=None if base.method != "pca" else base.k)
    if name == "corr8":
        return replace(base, method="corr", k=8)
    raise ValueError(f"unknown feature set {name!r}")


@dataclass
class GridResult:
    rows: list[tuple[int, str, str, CvReport]]

    def cell(self, model: str, feature_set: str, seed: int | None = None) -> CvReport:
        for s, m, f, r in self.rows:
            if m == model and f == feature_set and (seed is None or s == seed):
                return r
        raise KeyError((model, feature_set, seed))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "model", "feature_set", "n_model_inputs", *METRIC_NAMES,
                    "pooled_accuracy", "pooled_f1"])
        for s, m, f, r in self.rows:
            n_in = "/".join(str(fd["n_model_inputs"]) for fd in r.folds)
            w.writerow([s, m, f, n_in, *(f"{r.mean[k]:.6f}" for k in METRIC_NAMES),
                        f"{r.pooled['accuracy']:.6f}", f"{r.pooled['f1']:.6f}"])
        return buf.getvalue()

    def table(self, metric: str = "accuracy") -> str:
        """Model x feature-set table of fold-mean ``metric`` (averaged over seeds)."""
        lines = [f"{metric:<8}" + "".join(f"{f:>10}" for f in FEATURE_SETS)]
        for m in MODELS:
            cells = []
            for f in FEATURE_SETS:
                vals = [r.mean[metric] for s, mm, ff, r in self.rows if mm == m and ff == f]
                cells.append(f"{100 * np.mean(vals):9.2f}%" if vals else f"{'-':>10}")
            lines.append(f"{m.upper():<8}" + "".join(cells))
        return "\n".join(lines) + "\n"

    def observations(self) -> dict:
        """Orderings worth recording against the clinical tables; never asserted."""
        acc = {(m, f): float(np.mean([r.accuracy for s, mm, ff, r in self.rows if mm == m and ff == f]))
               for m in MODELS for f in FEATURE_SETS}
        return {
            "dnn_ge_cnn": {f: acc[("dnn", f)] >= acc[("cnn", f)] for f in FEATURE_SETS},
            "cnn_weakest_feature_set": min(FEATURE_SETS, key=lambda f: acc[("cnn", f)]),
            "dnn_best_feature_set": max(FEATURE_SETS, key=lambda f: acc[("dnn", f)]),
        }

    def to_json(self) -> str:
        return json.dumps({
            "cells": [{"seed": s, "model": m, "feature_set": f, **r.to_dict()} for s, m, f, r in self.rows],
            "observations": self.observations(),
        }, indent=2, sort_keys=True) + "\n"

    def audit_text(self) -> str:
        out = []
        for s, m, f, r in self.rows:
            for rec in r.audit.records:
                out.append(json.dumps({"seed": s, "model": m, "feature_set": f, **rec}, sort_keys=True))
        return "\n".join(out) + "\n"


def run_experiment_grid(data: FeatureMatrix, seeds=(0,), base: PipelineSpec = PipelineSpec(),
                        k: int = 3) -> GridResult:
    rows = []
    for seed in seeds:
        for m in MODELS:
            for f in FEATURE_SETS:
                spec = replace(base, model=m, selection=feature_set_selection(f, base.selection))
                rows.append((seed, m, f, run_cv(data, spec, k, seed, name=f"{m}/{f}")))
    return GridResult(rows)


def permuted_label_control(data: FeatureMatrix, pipeline: PipelineSpec = PipelineSpec(), perm_seeds=range(10),
                           k: int = 3, seed: int = 0) -> list[float]:
    """Fold-mean accuracy after shuffling labels, one value per permutation seed."""
    accs = []
    for ps in perm_seeds:
        y = np.random.default_rng(ps).permutation(data.y)
        accs.append(run_cv(data.with_labels(y), pipeline, k, seed).accuracy)
    return accs
