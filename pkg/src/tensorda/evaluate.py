"""Classification and discrepancy diagnostics.

The classifier is a closed-form one-vs-rest ridge regression on +/-1 targets,
chosen over an iterative SVM so that identical inputs always produce
bit-identical weights.  The normal equations are solved in mean form
(Gram matrix and targets divided by the sample count), which makes the
decision function invariant to duplicating the training set.

Domain discrepancy is measured as 2 * (1 - 2 * eps), where eps is the
cross-validated error of a linear classifier separating the two sample sets;
eps worse than chance is clamped to 0.5 (sets the classifier cannot tell
apart are at distance zero).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LinearClassifier",
    "DiscrepancyReport",
    "train_classifier",
    "accuracy",
    "a_distance",
    "class_divergence",
]

_BETWEEN_FLOOR = 1e-6


@dataclass(frozen=True)
class LinearClassifier:
    """One-vs-rest linear scorer; `weights` is (n_features + 1, n_classes)
    with the bias in the last row."""

    weights: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weights.shape[0] - 1:
            raise ValueError(
                f"expected (n, {self.weights.shape[0] - 1}) features, got {x.shape}"
            )
        return x @ self.weights[:-1] + self.weights[-1]

    def predict(self, features: np.ndarray) -> np.ndarray:
        # argmax breaks ties toward the lowest class index.
        return np.argmax(self.decision_function(features), axis=1)


def train_classifier(
    features: np.ndarray, labels, ridge: float = 1.0
) -> LinearClassifier:
    """Closed-form one-vs-rest ridge regression on +/-1 targets.

    Solves (X'X / n + ridge * D) W = X'Y / n per class, with a bias column
    appended and left unregularized (D is the identity with a zero in the
    bias position).

    Parameters
    ----------
    features : ndarray, shape (n_samples, n_features)
    labels : array-like of int
        Class indices in ``[0, n_classes)``.
    ridge : float
        Strictly positive regularization weight.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2:
        raise ValueError("features must be 2-D")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must be one integer per sample")
    if ridge <= 0:
        raise ValueError("ridge must be > 0 (the unregularized system may be singular)")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain NaN or Inf")
    n, d = x.shape
    n_classes = int(y.max()) + 1
    if y.min() < 0:
        raise ValueError("labels must be non-negative")
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if n < n_classes:
        raise ValueError(f"need at least {n_classes} samples, got {n}")

    xb = np.hstack([x, np.ones((n, 1))])
    gram = (xb.T @ xb) / n
    reg = np.full(d + 1, float(ridge))
    reg[-1] = 0.0
    gram = gram + np.diag(reg)
    targets = np.full((n, n_classes), -1.0)
    targets[np.arange(n), y] = 1.0
    rhs = (xb.T @ targets) / n
    try:
        weights = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"ridge system could not be solved: {exc}") from exc
    return LinearClassifier(weights)


def accuracy(clf: LinearClassifier, features: np.ndarray, labels) -> float:
    """Fraction of samples whose predicted class matches `labels`."""
    y = np.asarray(labels)
    pred = clf.predict(features)
    if y.shape != pred.shape:
        raise ValueError("labels length does not match feature count")
    return float(np.mean(pred == y))


def _fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    """Deterministic fold assignment that depends only on (n, folds, seed),
    so each domain keeps the same folds regardless of argument order."""
    rng = np.random.default_rng([int(seed), int(n), int(folds)])
    ids = np.empty(n, dtype=np.int64)
    ids[rng.permutation(n)] = np.arange(n) % folds
    return ids


def a_distance(
    feats_a: np.ndarray,
    feats_b: np.ndarray,
    folds: int = 5,
    seed: int = 0,
    ridge: float = 1.0,
) -> float:
    """Proxy distance 2 * (1 - 2 * eps) between two sample sets in [0, 2].

    eps is the stratified k-fold cross-validated error of the linear
    classifier separating the sets (pseudo-labels 0 and 1).  Folds are
    assigned per domain from `seed`; if a domain has fewer samples than
    `folds`, the fold count is reduced with a warning.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be 2-D with equal width")
    na, nb = a.shape[0], b.shape[0]
    if na == 0 or nb == 0:
        raise ValueError("both sample sets must be non-empty")
    if folds < 2:
        raise ValueError("folds must be >= 2")
    eff_folds = min(folds, na, nb)
    if eff_folds < folds:
        warnings.warn(
            f"reducing folds from {folds} to {max(eff_folds, 2)}: a fold would "
            f"miss one domain",
            UserWarning,
            stacklevel=2,
        )
    eff_folds = max(eff_folds, 2)

    x = np.vstack([a, b])
    y = np.concatenate([np.zeros(na, dtype=np.int64), np.ones(nb, dtype=np.int64)])
    fid = np.concatenate(
        [_fold_ids(na, eff_folds, seed), _fold_ids(nb, eff_folds, seed)]
    )
    errors = 0
    for f in range(eff_folds):
        train = fid != f
        test = ~train
        if not np.any(test):
            continue
        clf = train_classifier(x[train], y[train], ridge=ridge)
        errors += int(np.sum(clf.predict(x[test]) != y[test]))
    eps = errors / (na + nb)
    eps = min(eps, 0.5)
    return float(np.clip(2.0 * (1.0 - 2.0 * eps), 0.0, 2.0))


@dataclass(frozen=True)
class DiscrepancyReport:
    """Domain- and class-level discrepancy summary.

    ``d_a`` is the distance between the two full populations, ``d_a_w``
    averages per-class distances between matching classes of the two sets,
    ``d_a_b`` averages distances between distinct classes of the counterpart
    set, and ``j_s = d_a_w / d_a_b`` (denominator floored) scores overall
    class structure: low means classes stay put and stay separated.
    """

    d_a: float
    d_a_w: float
    d_a_b: float
    j_s: float

    def __post_init__(self):
        for name in ("d_a", "d_a_w", "d_a_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 2.0:
                raise ValueError(f"{name}={v} outside [0, 2]")
        if self.j_s < 0:
            raise ValueError("j_s must be >= 0")

    def as_dict(self) -> dict:
        return {
            "d_a": self.d_a,
            "d_a_w": self.d_a_w,
            "d_a_b": self.d_a_b,
            "j_s": self.j_s,
        }


def class_divergence(
    source_feats: np.ndarray,
    source_labels,
    counterpart_feats: np.ndarray,
    counterpart_labels=None,
    folds: int = 5,
    seed: int = 0,
    ridge: float = 1.0,
) -> DiscrepancyReport:
    """Class-level discrepancy between source features and a counterpart set.

    The counterpart is whatever population the source is being compared
    against in the same feature space: the aligned copy of the source itself
    (the default, ``counterpart_labels=None`` reuses `source_labels`), or the
    target samples with predicted labels when measuring how well each class
    migrated across domains.

    Within-class divergence averages ``a_distance`` between class ``i`` of the
    source and class ``i`` of the counterpart; between-class divergence
    averages it over distinct ordered class pairs of the counterpart.  A class
    absent from the counterpart contributes the maximal distance 2 to the
    within term and is skipped in the between term.

    Every source class must have at least 2 samples.
    """
    src = np.asarray(source_feats, dtype=np.float64)
    y_src = np.asarray(source_labels)
    cpt = np.asarray(counterpart_feats, dtype=np.float64)
    y_cpt = y_src if counterpart_labels is None else np.asarray(counterpart_labels)
    if src.ndim != 2 or cpt.ndim != 2 or src.shape[1] != cpt.shape[1]:
        raise ValueError("feature sets must be 2-D with equal width")
    if y_src.shape != (src.shape[0],) or y_cpt.shape != (cpt.shape[0],):
        raise ValueError("label lengths must match their feature sets")

    classes = np.unique(y_src)
    if classes.size < 2:
        raise ValueError("need at least two classes")
    for c in classes:
        if int(np.sum(y_src == c)) < 2:
            raise ValueError(f"source class {c} has fewer than 2 samples")

    d_a = a_distance(src, cpt, folds=folds, seed=seed, ridge=ridge)

    within = []
    for c in classes:
        cpt_c = cpt[y_cpt == c]
        if cpt_c.shape[0] == 0:
            within.append(2.0)
            continue
        within.append(
            a_distance(src[y_src == c], cpt_c, folds=folds, seed=seed, ridge=ridge)
        )
    d_a_w = float(np.mean(within))

    between = []
    for ci in classes:
        for cj in classes:
            if ci == cj:
                continue
            fi = cpt[y_cpt == ci]
            fj = cpt[y_cpt == cj]
            if fi.shape[0] == 0 or fj.shape[0] == 0:
                continue
            between.append(a_distance(fi, fj, folds=folds, seed=seed, ridge=ridge))
    d_a_b = float(np.mean(between)) if between else 0.0

    j_s = d_a_w / max(d_a_b, _BETWEEN_FLOOR)
    return DiscrepancyReport(d_a=d_a, d_a_w=d_a_w, d_a_b=d_a_b, j_s=float(j_s))
