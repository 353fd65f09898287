"""Evaluation: fooling rate, targeted success rate, random controls,
confusion matrices and the input-set-size sweep."""

import csv
import dataclasses
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .attack import run_attack, stack_images
from .tensor import Perturbation, TensorError, apply_perturbation, parse_norm


def _delta(delta):
    return delta.data if isinstance(delta, Perturbation) else np.asarray(delta, dtype=np.float64)


def clean_labels(oracle, X):
    return oracle.predict(stack_images(X))


def perturbed_labels(oracle, X, delta, clip=True):
    return oracle.predict(apply_perturbation(stack_images(X), _delta(delta), clip))


def fooling_rate(oracle, X, delta, clip=True, labels=None):
    """Fraction of images whose predicted label changes under ``delta``.

    Costs one clean pass and one perturbed pass (2|X| queries) unless clean
    ``labels`` are supplied.
    """
    X = stack_images(X)
    if X.shape[0] == 0:
        raise TensorError("empty dataset")
    if labels is None:
        labels = clean_labels(oracle, X)
    return float(np.mean(perturbed_labels(oracle, X, delta, clip) != labels))


def targeted_success_rate(oracle, X, delta, target_class, clip=True):
    """Fraction of perturbed images predicted as ``target_class``."""
    if not 0 <= target_class < oracle.num_classes:
        raise ValueError("unknown class")
    X = stack_images(X)
    if X.shape[0] == 0:
        raise TensorError("empty dataset")
    return float(np.mean(perturbed_labels(oracle, X, delta, clip) == target_class))


def random_uap(shape, p, xi, seed=None):
    """A random perturbation lying exactly on the Lp sphere of radius ``xi``.

    p=2: Gaussian direction rescaled (uniform on the sphere).
    p=1: exponential magnitudes normalised to sum ``xi`` with random signs
    (uniform on the L1 sphere).
    p=inf: uniform draw inside the cube, then one uniformly chosen coordinate
    is pushed to ``+-xi`` (uniform on the cube's surface).
    """
    if not xi > 0:
        raise ValueError("invalid radius")
    p = parse_norm(p)
    rng = np.random.default_rng(seed)
    n = int(np.prod(shape))
    if p == 2:
        g = rng.standard_normal(n)
        v = g * (xi / np.linalg.norm(g))
    elif p == 1:
        mag = rng.exponential(size=n)
        signs = rng.choice((-1.0, 1.0), size=n)
        v = signs * mag * (xi / mag.sum())
    else:
        v = rng.uniform(-xi, xi, size=n)
        face = rng.integers(n)
        v[face] = xi if rng.random() < 0.5 else -xi
    return Perturbation(v.reshape(shape), p, xi)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    classes: Optional[List[str]] = None

    @property
    def normalized(self):
        """Row-normalised fractions; rows of absent classes stay zero."""
        c = self.counts.astype(np.float64)
        tot = c.sum(axis=1, keepdims=True)
        return np.divide(c, tot, out=np.zeros_like(c), where=tot > 0)

    @property
    def total(self):
        return int(self.counts.sum())

    def to_dict(self):
        return {
            "classes": self.classes,
            "counts": self.counts.tolist(),
            "normalized": self.normalized.tolist(),
        }


def confusion_from_predictions(true_labels, predictions, num_classes, classes=None):
    true_labels = np.asarray(true_labels)
    predictions = np.asarray(predictions)
    for arr in (true_labels, predictions):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError("unknown class")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (true_labels, predictions), 1)
    return ConfusionMatrix(counts, classes)


def confusion_matrix(oracle, X, true_labels, delta, clip=True, classes=None):
    """Rows are true classes, columns the predictions under ``delta``."""
    true_labels = np.asarray(true_labels)
    k = oracle.num_classes
    if true_labels.size and (true_labels.min() < 0 or true_labels.max() >= k):
        raise ValueError("unknown class")
    pred = perturbed_labels(oracle, X, delta, clip)
    return confusion_from_predictions(true_labels, pred, k, classes)


def evaluate_uap(oracle, X, delta, true_labels=None, target=None, clip=True, classes=None):
    """Metrics dict in the JSON layout the CLI writes.

    Non-targeted: ``r_f``. Targeted: ``r_s`` and ``baseline_r_s``. The
    confusion matrix needs ``true_labels``. ``queries`` counts the oracle
    calls made here.
    """
    X = stack_images(X)
    start = oracle.query_count
    clean = clean_labels(oracle, X)
    pert = perturbed_labels(oracle, X, delta, clip)
    out = {
        "n": int(X.shape[0]),
        "r_f": float(np.mean(pert != clean)),
        "r_s": None,
        "baseline_r_s": None,
        "confusion": None,
    }
    if target is not None:
        if not 0 <= target < oracle.num_classes:
            raise ValueError("unknown class")
        out["r_s"] = float(np.mean(pert == target))
        out["baseline_r_s"] = float(np.mean(clean == target))
    if true_labels is not None:
        cm = confusion_from_predictions(true_labels, pert, oracle.num_classes, classes)
        out["confusion"] = cm.normalized.tolist()
        out["confusion_counts"] = cm.counts.tolist()
        out["clean_confusion"] = confusion_from_predictions(
            true_labels, clean, oracle.num_classes, classes).normalized.tolist()
    out["queries"] = oracle.query_count - start
    return out


def random_baseline(oracle, X, shape, p, xi, trials, seed=0, target=None, clip=True):
    """Evaluate ``trials`` random UAPs; returns per-trial rates and summary."""
    X = stack_images(X)
    labels = clean_labels(oracle, X)
    rates = []
    norms = []
    for t in range(trials):
        d = random_uap(shape, p, xi, seed=None if seed is None else seed + t)
        norms.append(d.norm())
        pred = perturbed_labels(oracle, X, d, clip)
        rates.append(float(np.mean(pred == target)) if target is not None
                     else float(np.mean(pred != labels)))
    key = "r_s" if target is not None else "r_f"
    return {
        "metric": key,
        "trials": trials,
        "rates": rates,
        "norms": norms,
        "mean": float(np.mean(rates)),
        "min": float(np.min(rates)),
        "max": float(np.max(rates)),
    }


@dataclass
class SweepRow:
    n: int
    rf_input: float
    rf_validation: float
    iterations: int
    queries: int


def split_for_sweep(pool_size, sizes, validation_size, seed):
    """Index sets for the sweep: one fixed validation set, then nested input
    sets drawn from the remaining images (input for N is a prefix of the
    input for any larger N)."""
    need = max(sizes) + validation_size
    if pool_size < need:
        raise ValueError(f"insufficient images: need {need}, pool has {pool_size}")
    perm = np.random.default_rng(seed).permutation(pool_size)
    validation = np.sort(perm[:validation_size])
    rest = perm[validation_size:]
    return {n: np.sort(rest[:n]) for n in sizes}, validation


def size_sweep(oracle, pool, sizes, validation_size, seed, config):
    """Fit a UAP on N pooled images for each N and report R_f on the input
    set and on a held-out validation set of fixed size."""
    pool = stack_images(pool)
    inputs, validation = split_for_sweep(pool.shape[0], sizes, validation_size, seed)
    X_val = pool[validation]
    val_labels = clean_labels(oracle, X_val)
    rows = []
    for n in sizes:
        X_in = pool[inputs[n]]
        report = run_attack(oracle, X_in, config)
        rf_in = fooling_rate(oracle, X_in, report.delta, config.clip, labels=report.labels)
        rf_val = fooling_rate(oracle, X_val, report.delta, config.clip, labels=val_labels)
        rows.append(SweepRow(n, rf_in, rf_val, report.iterations, report.queries))
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in dataclasses.fields(SweepRow)])
        for r in rows:
            w.writerow([r.n, repr(r.rf_input), repr(r.rf_validation), r.iterations, r.queries])


__all__ = [
    "ConfusionMatrix",
    "SweepRow",
    "clean_labels",
    "confusion_from_predictions",
    "confusion_matrix",
    "evaluate_uap",
    "fooling_rate",
    "random_baseline",
    "random_uap",
    "size_sweep",
    "split_for_sweep",
    "targeted_success_rate",
    "write_sweep_csv",
]
