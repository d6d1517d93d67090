"""Dataset files, the synthetic ground-truth dataset, config parsing and report export.

Matrix files (``.dgzm``): ``b"DGZM"``, uint32 rows, uint32 cols (little
endian), then ``rows*cols`` little-endian float32 values in row-major
order.  Files ending in ``.csv`` hold the same matrix as comma-separated
text, one row per line.

A dataset directory contains ``features.dgzm``, ``attributes.dgzm`` and
``split.json``::

    {"format": "dgz-split", "version": 1, "n_classes": K,
     "seen_ids": [...], "unseen_ids": [...], "labels": [...],
     "train_seen": [...], "test_seen": [...], "test_unseen": [...]}

Synthetic datasets also carry ``true_centers.dgzm`` and
``true_covariance.dgzm``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, fields

import numpy as np

from dgz.errors import ConfigError, ContractError, FormatError
from dgz.metrics import SUMMARY_FIELDS, MetricsReport
from dgz.tensor_core import Rng

_MAGIC = b"DGZM"


# --- matrices ----------------------------------------------------------------


def write_matrix(path, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise FormatError("shape", f"matrix must be 2-D, got {arr.shape}")
    if str(path).endswith(".csv"):
        with open(path, "w") as fh:
            for row in arr:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        return
    header = _MAGIC + struct.pack("<II", arr.shape[0], arr.shape[1])
    with open(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_matrix(path):
    """Load a DGZM or CSV matrix as float64."""
    if str(path).endswith(".csv"):
        rows = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append([float(v) for v in line.split(",")])
                except ValueError as exc:
                    raise FormatError(f"line {lineno}", str(exc)) from None
        if rows and len({len(r) for r in rows}) != 1:
            raise FormatError("columns", "rows have different lengths")
        return np.array(rows, dtype=np.float64).reshape(len(rows), -1 if rows else 0)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError("magic", f"expected {_MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError("dims", "truncated header")
    rows, cols = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * rows * cols
    if len(blob) != expected:
        raise FormatError("payload", f"expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=12)
    return data.reshape(rows, cols).astype(np.float64)


# --- datasets ------------------------------------------------------------------


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    seen_ids: np.ndarray
    unseen_ids: np.ndarray
    train_seen: np.ndarray
    test_seen: np.ndarray
    test_unseen: np.ndarray
    true_centers: np.ndarray | None = None
    true_covariance: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.attributes = np.asarray(self.attributes, dtype=np.float64)
        for name in ("labels", "seen_ids", "unseen_ids", "train_seen", "test_seen", "test_unseen"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
        self.validate()

    def validate(self):
        n = self.features.shape[0]
        k = self.attributes.shape[0]
        if self.features.ndim != 2 or self.attributes.ndim != 2:
            raise FormatError("features", "features and attributes must be matrices")
        if self.labels.shape[0] != n:
            raise FormatError("labels", f"{self.labels.shape[0]} labels for {n} feature rows")
        if n and (self.labels.min() < 0 or self.labels.max() >= k):
            raise FormatError("labels", f"label outside [0, {k}) has no attribute row")
        if np.intersect1d(self.seen_ids, self.unseen_ids).size:
            raise FormatError("seen_ids", "seen and unseen ids overlap")
        ids = np.concatenate([self.seen_ids, self.unseen_ids])
        if ids.size and (ids.min() < 0 or ids.max() >= k):
            raise FormatError("seen_ids", f"class id outside [0, {k})")
        parts = {}
        for name in ("train_seen", "test_seen", "test_unseen"):
            idx = getattr(self, name)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise FormatError(name, f"index outside [0, {n})")
            if np.unique(idx).size != idx.size:
                raise FormatError(name, "repeated index")
            parts[name] = idx
        if (
            np.intersect1d(parts["train_seen"], parts["test_seen"]).size
            or np.intersect1d(parts["train_seen"], parts["test_unseen"]).size
            or np.intersect1d(parts["test_seen"], parts["test_unseen"]).size
        ):
            raise FormatError("partitions", "partitions overlap")
        if not np.isin(self.labels[self.train_seen], self.seen_ids).all():
            raise FormatError("train_seen", "contains a non-seen label")
        if not np.isin(self.labels[self.test_seen], self.seen_ids).all():
            raise FormatError("test_seen", "contains a non-seen label")
        if not np.isin(self.labels[self.test_unseen], self.unseen_ids).all():
            raise FormatError("test_unseen", "contains a non-unseen label")

    @property
    def n_classes(self):
        return self.attributes.shape[0]

    @property
    def d_x(self):
        return self.features.shape[1]

    @property
    def d_a(self):
        return self.attributes.shape[1]

    def part(self, name):
        idx = getattr(self, name)
        return self.features[idx], self.labels[idx]

    def subsample_train(self, classes, per_class, rng):
        """Copy whose training split keeps ``per_class`` random rows of each of ``classes``."""
        keep = []
        for c in classes:
            idx = self.train_seen[self.labels[self.train_seen] == c]
            if idx.size < per_class:
                raise ContractError(f"class {int(c)} has {idx.size} training rows, {per_class} requested")
            keep.append(np.sort(idx[rng.choice(idx.size, per_class)]))
        new = Dataset(**{f.name: getattr(self, f.name) for f in fields(self)})
        new.train_seen = np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64)
        return new


def save_dataset(ds, directory):
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, "features.dgzm"), ds.features)
    write_matrix(os.path.join(directory, "attributes.dgzm"), ds.attributes)
    split = {
        "format": "dgz-split",
        "version": 1,
        "n_classes": int(ds.n_classes),
        "seen_ids": ds.seen_ids.tolist(),
        "unseen_ids": ds.unseen_ids.tolist(),
        "labels": ds.labels.tolist(),
        "train_seen": ds.train_seen.tolist(),
        "test_seen": ds.test_seen.tolist(),
        "test_unseen": ds.test_unseen.tolist(),
    }
    with open(os.path.join(directory, "split.json"), "w") as fh:
        json.dump(split, fh)
        fh.write("\n")
    if ds.true_centers is not None:
        write_matrix(os.path.join(directory, "true_centers.dgzm"), ds.true_centers)
    if ds.true_covariance is not None:
        write_matrix(os.path.join(directory, "true_covariance.dgzm"), ds.true_covariance)


def read_split(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError("split", f"invalid JSON: {exc}") from None
    if doc.get("format") != "dgz-split":
        raise FormatError("format", "not a dgz-split document")
    for key in ("seen_ids", "unseen_ids", "labels", "train_seen", "test_seen", "test_unseen"):
        if key not in doc:
            raise FormatError(key, "missing")
        vals = doc[key]
        if not isinstance(vals, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in vals):
            raise FormatError(key, "must be a list of integers")
    return doc


def load_dataset(features_path, attributes_path, split_path, centers_path=None, covariance_path=None):
    """Load and validate a dataset; every invariant is checked here."""
    features = read_matrix(features_path)
    attributes = read_matrix(attributes_path)
    doc = read_split(split_path)
    if "n_classes" in doc and doc["n_classes"] != attributes.shape[0]:
        raise FormatError("n_classes", f"split says {doc['n_classes']}, attributes have {attributes.shape[0]} rows")
    return Dataset(
        features=features,
        labels=doc["labels"],
        attributes=attributes,
        seen_ids=doc["seen_ids"],
        unseen_ids=doc["unseen_ids"],
        train_seen=doc["train_seen"],
        test_seen=doc["test_seen"],
        test_unseen=doc["test_unseen"],
        true_centers=read_matrix(centers_path) if centers_path else None,
        true_covariance=read_matrix(covariance_path) if covariance_path else None,
    )


def load_dataset_dir(directory):
    def opt(name):
        p = os.path.join(directory, name)
        return p if os.path.exists(p) else None

    return load_dataset(
        os.path.join(directory, "features.dgzm"),
        os.path.join(directory, "attributes.dgzm"),
        os.path.join(directory, "split.json"),
        opt("true_centers.dgzm"),
        opt("true_covariance.dgzm"),
    )


# --- synthetic data --------------------------------------------------------------


@dataclass
class SynthSpec:
    """Class centers are an affine image of the attributes plus per-class noise.

    Attributes are unit-norm rows; ``map_scale`` is the per-entry std of the
    linear map, ``center_noise`` the per-dimension std of the deviation of
    each class center from that map, ``cov_scale`` the per-dimension std of
    the within-class Gaussian (shared covariance).
    """

    n_seen: int = 20
    n_unseen: int = 5
    d_x: int = 64
    d_a: int = 16
    samples_per_class: int = 200
    map_scale: float = 1.0
    offset_scale: float = 0.5
    center_noise: float = 0.3
    cov_scale: float = 1.0
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self):
        for name in ("n_seen", "n_unseen", "d_x", "d_a", "samples_per_class"):
            if getattr(self, name) <= 0:
                raise ContractError(f"SynthSpec.{name} must be positive")
        if min(self.map_scale, self.offset_scale, self.center_noise, self.cov_scale) < 0:
            raise ContractError("SynthSpec scales must be non-negative")
        if not 0 < self.test_fraction < 1:
            raise ContractError("SynthSpec.test_fraction must lie in (0, 1)")
        n_test = int(round(self.test_fraction * self.samples_per_class))
        if n_test < 1 or n_test >= self.samples_per_class:
            raise ContractError("each seen class needs at least one train and one test sample")


def synth_dataset(spec):
    spec.validate()
    rng = Rng(spec.seed)
    k = spec.n_seen + spec.n_unseen
    attrs = rng.normal((k, spec.d_a))
    attrs /= np.linalg.norm(attrs, axis=1, keepdims=True)
    proj = rng.normal((spec.d_a, spec.d_x)) * spec.map_scale
    offset = rng.normal(spec.d_x) * spec.offset_scale
    centers = attrs @ proj + offset + spec.center_noise * rng.normal((k, spec.d_x))
    chol = spec.cov_scale * rng.normal((spec.d_x, spec.d_x)) / np.sqrt(spec.d_x)
    cov = chol @ chol.T
    unseen_ids = np.sort(rng.choice(k, spec.n_unseen))
    seen_ids = np.setdiff1d(np.arange(k), unseen_ids)

    m = spec.samples_per_class
    n_test = int(round(spec.test_fraction * m))
    feats, labels = [], []
    train_seen, test_seen, test_unseen = [], [], []
    for c in range(k):
        z = rng.normal((m, spec.d_x))
        feats.append(centers[c] + z @ chol.T)
        labels.append(np.full(m, c))
        idx = np.arange(c * m, (c + 1) * m)
        if c in unseen_ids:
            test_unseen.append(idx)
        else:
            perm = idx[rng.permutation(m)]
            test_seen.append(np.sort(perm[:n_test]))
            train_seen.append(np.sort(perm[n_test:]))
    return Dataset(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        attributes=attrs,
        seen_ids=seen_ids,
        unseen_ids=unseen_ids,
        train_seen=np.concatenate(train_seen),
        test_seen=np.concatenate(test_seen),
        test_unseen=np.concatenate(test_unseen),
        true_centers=centers,
        true_covariance=cov,
    )


# --- config files ----------------------------------------------------------------


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment; later keys win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def read_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


# --- report export -------------------------------------------------------------------


def summary_header(leading=()):
    return ",".join(tuple(leading) + SUMMARY_FIELDS)


def export_report(report, directory, stem="report"):
    """Write ``<stem>.json``, ``<stem>.csv`` and one ``<stem>_curve_<name>.csv`` per curve.

    The CSV header is ``A_u,A_s,H,T1,cmmd,cacd,A_is,A_iu``; unmeasured
    values are empty cells.  Returns the written paths.
    """
    os.makedirs(directory, exist_ok=True)
    paths = []
    p = os.path.join(directory, f"{stem}.json")
    with open(p, "w") as fh:
        fh.write(report.to_json())
    paths.append(p)
    p = os.path.join(directory, f"{stem}.csv")
    with open(p, "w") as fh:
        fh.write(summary_header() + "\n" + report.csv_row() + "\n")
    paths.append(p)
    for name in sorted(report.curves):
        paths.append(write_curve(os.path.join(directory, f"{stem}_curve_{name}.csv"), report.curves[name]))
    return paths


def write_curve(path, columns):
    """Columns (name -> equal-length list) as CSV, in sorted column order."""
    names = sorted(columns)
    lengths = {len(columns[n]) for n in names}
    if len(lengths) > 1:
        raise ContractError(f"curve columns differ in length: {lengths}")
    rows = zip(*(columns[n] for n in names))
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path


def write_table(path, rows, leading="name"):
    """Summary table: one ``(name, MetricsReport)`` pair per line."""
    with open(path, "w") as fh:
        fh.write(summary_header((leading,)) + "\n")
        for name, rep in rows:
            fh.write(f"{name},{rep.csv_row()}\n")
    return path


def read_report_json(path):
    with open(path) as fh:
        return MetricsReport.from_dict(json.load(fh))
