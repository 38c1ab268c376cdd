"""Deprivation classes, seeded splits, Gaussian Naive Bayes and evaluation."""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from urbandep.errors import ConfigError, DataError, SplitError


@dataclass(frozen=True)
class BinningSpec:
    bin_count: int
    edges: tuple[float, ...]

    def __post_init__(self):
        if self.bin_count < 2:
            raise ConfigError("bin_count must be at least 2")
        if len(self.edges) != self.bin_count - 1:
            raise ConfigError("need bin_count - 1 edges")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise DataError(f"bin edges not strictly increasing: {self.edges}")

    @classmethod
    def from_scores(cls, scores, bin_count: int) -> "BinningSpec":
        """Quantile cut points (linear interpolation) of the given training scores."""
        q = np.arange(1, bin_count) / bin_count
        edges = np.quantile(np.asarray(scores, dtype=float), q)
        return cls(bin_count, tuple(float(e) for e in edges))


def bin_scores(scores, spec: BinningSpec) -> np.ndarray:
    """Label = number of edges strictly below the score, so edge ties go down."""
    return np.searchsorted(np.asarray(spec.edges), np.asarray(scores, dtype=float), side="left")


def split(ward_ids: Sequence[str], train_fraction: float, seed: int,
          strata: Sequence | None = None) -> tuple[list[str], list[str]]:
    """Seeded random train/test partition of sorted ward ids.

    With ``strata`` (one label per id, in the order given) each stratum is
    split separately and the per-stratum train counts are rounded.
    """
    if not 0.0 < train_fraction < 1.0:
        raise SplitError("train_fraction must lie in (0, 1)")
    ids = sorted(ward_ids)
    rng = np.random.default_rng(seed)
    if strata is None:
        n_train = int(math.floor(train_fraction * len(ids) + 0.5))
        perm = rng.permutation(len(ids))
        train_idx = perm[:n_train]
    else:
        label_of = dict(zip(ward_ids, strata))
        labels = np.array([label_of[w] for w in ids])
        train_idx = []
        for lab in sorted(set(labels.tolist())):
            members = np.flatnonzero(labels == lab)
            k = int(math.floor(train_fraction * members.size + 0.5))
            train_idx.extend(rng.permutation(members)[:k].tolist())
        train_idx = np.array(train_idx, dtype=int)
    in_train = np.zeros(len(ids), dtype=bool)
    in_train[train_idx] = True
    train = [w for w, t in zip(ids, in_train) if t]
    test = [w for w, t in zip(ids, in_train) if not t]
    if not train or not test:
        raise SplitError(f"split of {len(ids)} ids at {train_fraction} leaves an empty side")
    return train, test


@dataclass
class NbModel:
    classes: list
    priors: np.ndarray
    means: np.ndarray  # (classes, features)
    variances: np.ndarray  # (classes, features)
    feature_names: list[str]
    epsilon: float

    def to_dict(self) -> dict:
        return {
            "classes": [c if isinstance(c, str) else int(c) for c in self.classes],
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "featureNames": list(self.feature_names),
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NbModel":
        return cls(list(d["classes"]), np.array(d["priors"], dtype=float),
                   np.array(d["means"], dtype=float), np.array(d["variances"], dtype=float),
                   list(d["featureNames"]), float(d["epsilon"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def train_nb(features, labels, feature_names: Sequence[str] | None = None) -> NbModel:
    """Fit a Gaussian Naive Bayes model.

    Means and maximum-likelihood variances are taken per class and feature;
    variances are floored at 1e-9 times the largest per-feature variance of
    the whole training set. Classes without examples are simply absent.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels)
    if X.shape[1] == 0:
        raise DataError("train_nb: no features")
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise DataError("train_nb: features and labels must be non-empty and aligned")
    classes = sorted(set(y.tolist()))
    max_var = float(X.var(axis=0).max())
    eps = 1e-9 * max_var if max_var > 0 else 1e-9
    priors = np.empty(len(classes))
    means = np.empty((len(classes), X.shape[1]))
    variances = np.empty_like(means)
    for i, c in enumerate(classes):
        Xc = X[y == c]
        priors[i] = Xc.shape[0] / X.shape[0]
        means[i] = Xc.mean(axis=0)
        variances[i] = np.maximum(Xc.var(axis=0), eps)
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(X.shape[1])]
    return NbModel(classes, priors, means, variances, names, eps)


def _log_joint(model: NbModel, X: np.ndarray) -> np.ndarray:
    ll = -0.5 * (np.log(2 * np.pi * model.variances)[None]
                 + (X[:, None, :] - model.means[None]) ** 2 / model.variances[None])
    return np.log(model.priors)[None] + ll.sum(axis=-1)


def predict_proba(model: NbModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.feature_names):
        raise DataError(f"expected {len(model.feature_names)} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature value")
    lj = _log_joint(model, X)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def predict_many(model: NbModel, X) -> list:
    # argmax returns the first maximum: ties go to the lower class index
    post = predict_proba(model, X)
    return [model.classes[i] for i in post.argmax(axis=1)]


def predict_nb(model: NbModel, x) -> tuple[object, dict]:
    post = predict_proba(model, np.asarray(x, dtype=float)[None, :])[0]
    return model.classes[int(post.argmax())], dict(zip(model.classes, post.tolist()))


@dataclass
class EvalReport:
    classes: list
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f_measure: np.ndarray
    mean_abs_bin_error: float | None = None

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "classes": [c if isinstance(c, str) else int(c) for c in self.classes],
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "fMeasure": self.f_measure.tolist(),
            "accuracy": self.accuracy,
            "meanAbsBinError": self.mean_abs_bin_error,
        }


def evaluate(predicted, truth, classes: Sequence | None = None) -> EvalReport:
    """Confusion matrix (rows true, columns predicted) and per-class P/R/F."""
    predicted, truth = list(predicted), list(truth)
    if len(predicted) != len(truth) or not truth:
        raise DataError("evaluate: predicted and truth must be non-empty and aligned")
    classes = list(classes) if classes is not None else sorted(set(truth) | set(predicted))
    pos = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        cm[pos[t], pos[p]] += 1
    tp = np.diag(cm).astype(float)
    col, row = cm.sum(axis=0), cm.sum(axis=1)
    precision = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
    denom = precision + recall
    f = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    mabe = None
    if all(isinstance(c, (int, np.integer)) for c in classes):
        mabe = float(np.mean(np.abs(np.array(truth) - np.array(predicted))))
    return EvalReport(classes, cm, precision, recall, f, mabe)


def fit_and_evaluate(train_X, train_y, test_X, test_y, classes, feature_names=None):
    """Train on one split, predict the other; returns (model, report)."""
    model = train_nb(train_X, train_y, feature_names)
    pred = predict_many(model, test_X)
    return model, evaluate(pred, list(test_y), classes)


def run_baseline(baseline: dict[str, Sequence[float]], labels: dict[str, int],
                 train_ids: Sequence[str], test_ids: Sequence[str], classes) -> EvalReport:
    """NB on the three count features (check-ins, venue POIs, map POIs)."""
    tr = np.array([baseline[w] for w in train_ids], dtype=float)
    te = np.array([baseline[w] for w in test_ids], dtype=float)
    _, report = fit_and_evaluate(tr, [labels[w] for w in train_ids], te,
                                 [labels[w] for w in test_ids], classes,
                                 ["fsqCheckins", "fsqPoiCount", "osmPoiCount"])
    return report


def class_letter(i: int) -> str:
    return string.ascii_lowercase[i] if i < 26 else f"c{i}"


def format_report(report: EvalReport, baseline: EvalReport | None = None) -> str:
    """Text table: one row per class with precision, recall and F-measure.

    With a baseline, each value is followed by its relative change in percent.
    """
    b = len(report.classes)

    def cell(v, ref):
        if ref is None:
            return f"{v:.3f}"
        if ref == 0:
            return f"{v:.3f} (n/a)"
        return f"{v:.3f} ({(v - ref) / ref * 100:+.0f}%)"

    lines = [f"{'Precision':<16}{'Recall':<16}{'F-Measure':<16}Class"]
    for i, c in enumerate(report.classes):
        if b == 2:
            name = "below median (less deprived)" if i == 0 else "above median (more deprived)"
        else:
            lo, hi = 100 * i // b, 100 * (i + 1) // b
            name = f"{class_letter(i)}: {lo}-{hi}% of scores (low = least deprived)"
        refs = (None, None, None) if baseline is None else (
            baseline.precision[i], baseline.recall[i], baseline.f_measure[i])
        vals = (report.precision[i], report.recall[i], report.f_measure[i])
        lines.append("".join(f"{cell(v, r):<16}" for v, r in zip(vals, refs)) + name)
    lines.append("")
    header = " ".join(f"{class_letter(i):>4}" for i in range(b)) + "   <- classified as"
    lines.append(header)
    for i, row in enumerate(report.confusion):
        lines.append(" ".join(f"{v:>4d}" for v in row) + f"   {class_letter(i)}")
    if report.mean_abs_bin_error is not None:
        lines.append("")
        lines.append(f"mean |true - predicted| bin: {report.mean_abs_bin_error:.3f}")
    return "\n".join(lines) + "\n"
