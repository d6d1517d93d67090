"""Evaluation metrics: class-averaged MMD, GZSL accuracies, center distances."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from dgz.errors import ContractError, ShapeError


def im_kernel(x, y):
    """Inverse multiquadratic kernel ``2d / (2d + ||x - y||^2)``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ShapeError(f"im_kernel: dims differ ({x.shape[0]} vs {y.shape[0]})")
    d = x.shape[0]
    diff = x - y
    return 2.0 * d / (2.0 * d + float(diff @ diff))


def im_kernel_matrix(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = a.shape[1]
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return 2.0 * d / (2.0 * d + sq)


def _as_class_dict(sets):
    if isinstance(sets, dict):
        return {int(k): np.asarray(v, dtype=np.float64) for k, v in sets.items()}
    return {i: np.asarray(v, dtype=np.float64) for i, v in enumerate(sets)}


def cmmd_class_term(real, pseudo, kernel=im_kernel_matrix):
    """One class's term: unbiased within-set sums (i != j), biased cross sum (all i, j)."""
    n = real.shape[0]
    if n < 2 or pseudo.shape[0] != n:
        raise ContractError(
            f"cmmd needs equal per-class counts >= 2, got {real.shape[0]} and {pseudo.shape[0]}"
        )
    kxx = kernel(real, real)
    kyy = kernel(pseudo, pseudo)
    kxy = kernel(real, pseudo)
    within = (kxx.sum() - np.trace(kxx) + kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return within - 2.0 * kxy.sum() / (n * n)


def cmmd(real_by_class, pseudo_by_class, kernel=im_kernel_matrix):
    """Class-averaged MMD between real and pseudo samples.

    Both arguments map class id to an ``n_c x d`` matrix (a list is indexed
    by position).  Classes are visited in ascending id order.
    """
    real = _as_class_dict(real_by_class)
    pseudo = _as_class_dict(pseudo_by_class)
    if set(real) != set(pseudo):
        raise ContractError("cmmd: real and pseudo sets cover different classes")
    if not real:
        raise ContractError("cmmd: no classes")
    terms = [cmmd_class_term(real[c], pseudo[c], kernel) for c in sorted(real)]
    return float(sum(terms) / len(terms))


def harmonic_mean(a_u, a_s):
    if a_u <= 0 or a_s <= 0:
        return 0.0
    return 2.0 * a_u * a_s / (a_u + a_s)


def per_class_accuracy(pred, true, classes):
    """Top-1 accuracy (%) of each class in ``classes``."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    out = {}
    for c in classes:
        sel = true == c
        if not sel.any():
            raise ContractError(f"class {int(c)} has no evaluation samples")
        out[int(c)] = 100.0 * float(np.mean(pred[sel] == c))
    return out


def gzsl_accuracy(pred, true, seen_ids, unseen_ids):
    """Per-class-averaged accuracies ``(A_u, A_s, H)`` in percent.

    Only classes that occur in ``true`` are averaged, so seen-only or
    unseen-only evaluations are allowed; a side with no samples scores 0.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    seen_ids = np.asarray(seen_ids)
    unseen_ids = np.asarray(unseen_ids)
    if not np.isin(true, np.union1d(seen_ids, unseen_ids)).all():
        raise ContractError("gzsl_accuracy: a true label is neither seen nor unseen")
    present = np.unique(true)
    u_cls = unseen_ids[np.isin(unseen_ids, present)]
    s_cls = seen_ids[np.isin(seen_ids, present)]
    a_u = float(np.mean(list(per_class_accuracy(pred, true, u_cls).values()))) if u_cls.size else 0.0
    a_s = float(np.mean(list(per_class_accuracy(pred, true, s_cls).values()))) if s_cls.size else 0.0
    return a_u, a_s, harmonic_mean(a_u, a_s)


def restricted_predict(scores, restrict_ids):
    """Argmax over the ``restrict_ids`` columns only; ties go to the lowest id."""
    restrict_ids = np.sort(np.asarray(restrict_ids))
    sub = np.asarray(scores)[:, restrict_ids]
    return restrict_ids[np.argmax(sub, axis=1)]


def intra_accuracy(scores, true, restrict_ids):
    """Per-class-averaged accuracy with competitors limited to ``restrict_ids``."""
    true = np.asarray(true)
    restrict_ids = np.asarray(restrict_ids)
    if not np.isin(true, restrict_ids).all():
        raise ContractError("intra_accuracy: a true label is outside the restricted set")
    pred = restricted_predict(scores, restrict_ids)
    classes = np.unique(true)
    return float(np.mean(list(per_class_accuracy(pred, true, classes).values())))


def cacd(gen_centers, real_centers, average=False):
    """Sum over classes of ``sqrt(||C_gen - C_real||_2)``; divided by the class count if ``average``."""
    g = np.asarray(gen_centers, dtype=np.float64)
    r = np.asarray(real_centers, dtype=np.float64)
    if g.shape != r.shape or g.ndim != 2:
        raise ShapeError(f"cacd: center shapes differ ({g.shape} vs {r.shape})")
    total = float(np.sqrt(np.sqrt(((g - r) ** 2).sum(axis=1))).sum())
    return total / g.shape[0] if average else total


SUMMARY_FIELDS = ("A_u", "A_s", "H", "T1", "cmmd", "cacd", "A_is", "A_iu")


@dataclass
class MetricsReport:
    """Accuracies are percentages; ``cmmd``/``cacd`` are ``None`` when not measured."""

    A_u: float = 0.0
    A_s: float = 0.0
    H: float = 0.0
    T1: float = 0.0
    cmmd: float | None = None
    cacd: float | None = None
    A_is: float = 0.0
    A_iu: float = 0.0
    per_class: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("A_u", "A_s", "H", "T1", "A_is", "A_iu"):
            v = getattr(self, name)
            if not (0.0 <= v <= 100.0 + 1e-9):
                raise ContractError(f"{name}={v} is not a percentage")

    def to_dict(self):
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in sorted(self.per_class.items(), key=lambda kv: int(kv[0]))}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["per_class"] = {int(k): v for k, v in d.get("per_class", {}).items()}
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def csv_row(self):
        cells = []
        for name in SUMMARY_FIELDS:
            v = getattr(self, name)
            cells.append("" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v)))
        return ",".join(cells)
