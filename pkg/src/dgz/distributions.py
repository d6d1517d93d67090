"""Builders for pseudo-unseen feature sets.

Kinds:

* ``GEN``    raw samples of a trained conditional generator
* ``SVG``    isotropic Gaussian, small variance, around given centers
* ``LVG``    isotropic Gaussian, large variance, around given centers
* ``SCG``    Gaussian with the training set's within-class covariance
* ``GC_SCG`` SCG around centers predicted from attributes by a center mapper

Each class samples from its own substream ``rng.substream(class_id)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dgz.errors import ContractError, ShapeError
from dgz.losses import generate
from dgz.nets import mlp_forward
from dgz.tensor_core import Tensor, cholesky_psd, no_record

KINDS = ("GEN", "SVG", "LVG", "SCG", "GC_SCG")


@dataclass
class PseudoSet:
    features: np.ndarray
    labels: np.ndarray
    kind: str
    per_class_count: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown pseudo-set kind {self.kind!r}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError("one label per pseudo feature row required")
        _, counts = np.unique(self.labels, return_counts=True)
        if counts.size and (counts != self.per_class_count).any():
            raise ContractError("every class must have exactly per_class_count rows")

    @property
    def classes(self):
        return np.unique(self.labels)

    def by_class(self):
        return {int(c): self.features[self.labels == c] for c in self.classes}

    def centers(self):
        cls = self.classes
        return class_centers(self.features, self.labels, cls)


@dataclass
class PseudoParams:
    """Spread settings.  ``None`` stds resolve relative to the data."""

    svg_std: float | None = None
    lvg_std: float | None = None
    svg_scale: float = 0.1
    lvg_scale: float = 3.0
    covariance: str = "pooled"
    jitter: float = 1e-6


def class_centers(features, labels, classes=None):
    """Row ``i`` is the mean of the samples labeled ``classes[i]``."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if classes is None:
        classes = np.unique(labels)
    out = np.empty((len(classes), features.shape[1]))
    for i, c in enumerate(classes):
        sel = labels == c
        if not sel.any():
            raise ContractError(f"class {int(c)} has no samples")
        out[i] = features[sel].mean(axis=0)
    return out


def statistical_covariance(features, labels, pooled=True):
    """Within-class covariance pooled over classes, ``sum x~ x~^T / (n - C)``.

    With ``pooled=False`` the global covariance around the overall mean is
    returned instead (``/(n - 1)``).
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = x.shape[0]
    if not pooled:
        if n < 2:
            raise ContractError("global covariance needs at least two samples")
        xc = x - x.mean(axis=0)
        return xc.T @ xc / (n - 1)
    classes, inv = np.unique(labels, return_inverse=True)
    if n <= classes.size:
        raise ContractError(f"pooled covariance needs n > classes ({n} <= {classes.size})")
    centers = class_centers(x, labels, classes)
    xc = x - centers[inv]
    cov = xc.T @ xc / (n - classes.size)
    return 0.5 * (cov + cov.T)


def within_class_std(features, labels):
    """Mean per-dimension within-class standard deviation."""
    cov = statistical_covariance(features, labels)
    return float(np.sqrt(np.clip(np.diag(cov), 0.0, None)).mean())


def _gaussian_around(centers, class_ids, chol, per_class, rng):
    d = centers.shape[1]
    blocks = []
    for c, mu in zip(class_ids, centers):
        z = rng.substream(int(c)).normal((per_class, d))
        blocks.append(mu + z @ chol.T)
    return np.concatenate(blocks, axis=0) if blocks else np.zeros((0, d))


def build_pseudo_unseen(
    kind,
    class_ids,
    per_class,
    rng,
    centers=None,
    train_features=None,
    train_labels=None,
    params=None,
    generator=None,
    mapper=None,
    attrs=None,
):
    """Build a :class:`PseudoSet` of ``per_class`` rows for each of ``class_ids``.

    ``centers`` (rows aligned with ``class_ids``) drive SVG/LVG/SCG;
    ``generator`` with ``attrs`` (one row per class) drives GEN; ``mapper``
    with ``attrs`` supplies the centers for GC_SCG.  Training features and
    labels set the data-relative spreads and the SCG covariance.
    """
    if kind not in KINDS:
        raise ContractError(f"unknown pseudo-set kind {kind!r}")
    if per_class <= 0:
        raise ContractError("per_class must be positive")
    params = params or PseudoParams()
    class_ids = np.asarray(class_ids, dtype=np.int64)
    labels = np.repeat(class_ids, per_class)

    if kind == "GEN":
        if generator is None or attrs is None:
            raise ContractError("GEN needs a trained generator and class attributes")
        rows = []
        with no_record():
            for c, a in zip(class_ids, np.asarray(attrs)):
                sub = rng.substream(int(c))
                a_rep = np.repeat(a.reshape(1, -1), per_class, axis=0).astype(generator.weights[0].dtype)
                rows.append(generate(generator, Tensor(a_rep), sub).value.astype(np.float64))
        return PseudoSet(np.concatenate(rows, axis=0), labels, kind, per_class)

    if kind == "GC_SCG":
        if mapper is None or attrs is None:
            raise ContractError("GC_SCG needs a trained center mapper and class attributes")
        centers = mlp_forward(mapper, np.asarray(attrs)).astype(np.float64)
    if centers is None:
        raise ContractError(f"{kind} needs class centers")
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape[0] != class_ids.shape[0]:
        raise ShapeError("one center row per class id required")
    d = centers.shape[1]

    if kind in ("SVG", "LVG"):
        std = params.svg_std if kind == "SVG" else params.lvg_std
        if std is None:
            if train_features is None:
                raise ContractError(f"{kind} needs training data or an explicit std")
            scale = params.svg_scale if kind == "SVG" else params.lvg_scale
            std = scale * within_class_std(train_features, train_labels)
        chol = std * np.eye(d)
    else:
        if train_features is None:
            raise ContractError(f"{kind} needs training data for its covariance")
        cov = statistical_covariance(train_features, train_labels, params.covariance == "pooled")
        chol, _ = cholesky_psd(cov, params.jitter)
    feats = _gaussian_around(centers, class_ids, chol, per_class, rng)
    return PseudoSet(feats, labels, kind, per_class)


def substitute_centers(pset, centers, kind=None):
    """Translate each class of ``pset`` so its empirical mean equals ``centers``.

    ``centers`` rows follow ascending class id.  This is the swap used to
    compare instance-level distributions on a shared set of class centers.
    """
    classes = pset.classes
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (classes.size, pset.features.shape[1]):
        raise ShapeError("one center row per pseudo class required")
    own = class_centers(pset.features, pset.labels, classes)
    idx = np.searchsorted(classes, pset.labels)
    feats = pset.features - own[idx] + centers[idx]
    return PseudoSet(feats, pset.labels.copy(), kind or pset.kind, pset.per_class_count)
