"""Dataset container, CSV directory format and a synthetic generator.

Directory layout (UTF-8, header-less CSV)::

    classes.csv        class_id,name,split         split in {seen, unseen}
    attributes.csv     one row of n_a floats per class, row i = class i
    seen.csv           class_id,f1,...,fd
    seen_test.csv      class_id,f1,...,fd          optional, generalized eval only
    unseen.csv         f1,...,fd
    unseen_labels.csv  class_id per row            optional, evaluation only

``unseen_labels.csv`` is only read when ``load_dataset(..., heldout=True)``;
the training code paths never ask for it.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numkit import as_matrix, make_rng


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


@dataclass(frozen=True)
class Dataset:
    attributes: np.ndarray
    class_names: list[str]
    seen_class_ids: list[int]
    unseen_class_ids: list[int]
    seen_features: np.ndarray
    seen_labels: np.ndarray
    unseen_features: np.ndarray
    unseen_labels_heldout: np.ndarray | None = None
    seen_test_features: np.ndarray | None = None
    seen_test_labels: np.ndarray | None = None

    def __post_init__(self):
        validate(self)

    @property
    def n_classes(self) -> int:
        return self.attributes.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.attributes.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.seen_features.shape[1]

    def without_heldout(self) -> "Dataset":
        return Dataset(
            self.attributes, self.class_names, self.seen_class_ids, self.unseen_class_ids,
            self.seen_features, self.seen_labels, self.unseen_features,
            None, self.seen_test_features, self.seen_test_labels,
        )


def validate(ds: Dataset) -> None:
    n_c = ds.attributes.shape[0]
    seen, unseen = set(ds.seen_class_ids), set(ds.unseen_class_ids)
    if seen & unseen:
        raise DataError(f"classes listed as both seen and unseen: {sorted(seen & unseen)}")
    if len(seen) + len(unseen) != n_c or seen | unseen != set(range(n_c)):
        raise DataError(f"seen+unseen classes must cover 0..{n_c - 1} exactly")
    if len(ds.class_names) != n_c:
        raise DataError(f"{len(ds.class_names)} class names for {n_c} attribute rows")
    if ds.seen_features.shape[0] != len(ds.seen_labels):
        raise DataError("seen features and labels differ in row count")
    bad = set(np.asarray(ds.seen_labels).tolist()) - seen
    if bad:
        raise DataError(f"seen labels outside the seen split: {sorted(bad)}")
    if ds.unseen_features.shape[1] != ds.seen_features.shape[1]:
        raise DataError("seen and unseen feature dimensions differ")
    if ds.unseen_labels_heldout is not None:
        if len(ds.unseen_labels_heldout) != ds.unseen_features.shape[0]:
            raise DataError("unseen features and held-out labels differ in row count")
        bad = set(np.asarray(ds.unseen_labels_heldout).tolist()) - unseen
        if bad:
            raise DataError(f"held-out unseen labels outside the unseen split: {sorted(bad)}")
    if ds.seen_test_features is not None:
        if ds.seen_test_labels is None or len(ds.seen_test_labels) != ds.seen_test_features.shape[0]:
            raise DataError("seen test features and labels differ in row count")
        bad = set(np.asarray(ds.seen_test_labels).tolist()) - seen
        if bad:
            raise DataError(f"seen test labels outside the seen split: {sorted(bad)}")
    for name in ("attributes", "seen_features", "unseen_features"):
        if not np.all(np.isfinite(getattr(ds, name))):
            raise DataError(f"{name} contains non-finite values")


# -- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_seen: int = 6
    n_unseen: int = 3
    n_attributes: int = 4
    feature_dim: int = 16
    per_class: int = 50
    seen_test_per_class: int = 5
    sigma: float = 0.1
    mixing_seed: int = 0
    per_class_counts: tuple[int, ...] | None = field(default=None)
    unseen_parents: int = 2
    unseen_perturbation: float = 0.3
    signal_scale: float = 0.4  # std of a cluster-centre coordinate

    def __post_init__(self):
        for name in ("n_seen", "n_unseen", "n_attributes", "feature_dim", "per_class"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")
        if self.seen_test_per_class < 0:
            raise DataError("seen_test_per_class must be >= 0")
        if self.sigma < 0:
            raise DataError("sigma must be >= 0")
        if not 1 <= self.unseen_parents <= self.n_seen:
            raise DataError("unseen_parents must lie in [1, n_seen]")
        if self.unseen_perturbation < 0:
            raise DataError("unseen_perturbation must be >= 0")
        if self.signal_scale <= 0:
            raise DataError("signal_scale must be > 0")
        if self.per_class_counts is not None:
            if len(self.per_class_counts) != self.n_seen + self.n_unseen:
                raise DataError("per_class_counts needs one entry per class")
            if min(self.per_class_counts) < 1:
                raise DataError("per_class_counts entries must be >= 1")

    def count(self, class_id: int) -> int:
        if self.per_class_counts is None:
            return self.per_class
        return self.per_class_counts[class_id]


def gen_synthetic(spec: SynthSpec, rng: np.random.Generator) -> Dataset:
    """Clusters whose centres are a fixed linear image of per-class attributes.

    Seen attribute rows are standard normal.  Each unseen row is a random convex
    combination of ``unseen_parents`` seen rows plus Gaussian perturbation, so
    unseen classes are related to, but distinct from, seen ones.  The
    attribute-to-feature map is drawn from ``spec.mixing_seed``; attributes and
    noise come from ``rng``.  Unseen classes are the last ``n_unseen`` ids.
    """
    n_c = spec.n_seen + spec.n_unseen
    mix = make_rng(spec.mixing_seed).standard_normal((spec.n_attributes, spec.feature_dim))
    mix *= spec.signal_scale / np.sqrt(spec.n_attributes)
    seen_attrs = rng.standard_normal((spec.n_seen, spec.n_attributes))
    unseen_attrs = np.empty((spec.n_unseen, spec.n_attributes))
    for u in range(spec.n_unseen):
        parents = rng.choice(spec.n_seen, size=spec.unseen_parents, replace=False)
        weights = rng.dirichlet(np.full(spec.unseen_parents, 2.0))
        unseen_attrs[u] = weights @ seen_attrs[parents]
        unseen_attrs[u] += spec.unseen_perturbation * rng.standard_normal(spec.n_attributes)
    attributes = np.vstack([seen_attrs, unseen_attrs])
    centres = attributes @ mix

    def draw(class_ids, counts):
        labels = np.repeat(np.asarray(class_ids, dtype=np.int64), counts)
        noise = rng.standard_normal((len(labels), spec.feature_dim)) * spec.sigma
        return centres[labels] + noise, labels

    seen_ids = list(range(spec.n_seen))
    unseen_ids = list(range(spec.n_seen, n_c))
    xs, ys = draw(seen_ids, [spec.count(c) for c in seen_ids])
    xu, yu = draw(unseen_ids, [spec.count(c) for c in unseen_ids])
    xt = yt = None
    if spec.seen_test_per_class > 0:
        xt, yt = draw(seen_ids, [spec.seen_test_per_class] * spec.n_seen)
    names = [f"class_{c:03d}" for c in range(n_c)]
    return Dataset(attributes, names, seen_ids, unseen_ids, xs, ys, xu, yu, xt, yt)


# -- CSV directory I/O -------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _write_rows(path: Path, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _labelled_rows(labels, feats):
    return ([str(int(y))] + [_fmt(v) for v in row] for y, row in zip(labels, feats.tolist()))


def save_dataset(ds: Dataset, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    seen = set(ds.seen_class_ids)
    _write_rows(d / "classes.csv",
                ([str(c), ds.class_names[c], "seen" if c in seen else "unseen"] for c in range(ds.n_classes)))
    _write_rows(d / "attributes.csv", ([_fmt(v) for v in row] for row in ds.attributes.tolist()))
    _write_rows(d / "seen.csv", _labelled_rows(ds.seen_labels, ds.seen_features))
    _write_rows(d / "unseen.csv", ([_fmt(v) for v in row] for row in ds.unseen_features.tolist()))
    if ds.unseen_labels_heldout is not None:
        _write_rows(d / "unseen_labels.csv", ([str(int(y))] for y in ds.unseen_labels_heldout))
    if ds.seen_test_features is not None:
        _write_rows(d / "seen_test.csv", _labelled_rows(ds.seen_test_labels, ds.seen_test_features))


def _read_rows(path: Path):
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if row:
                yield lineno, row


def _floats(path, lineno, cells) -> list[float]:
    try:
        return [float(c) for c in cells]
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-numeric cell") from None


def _int(path, lineno, cell) -> int:
    try:
        return int(cell)
    except ValueError:
        raise DataError(f"{path}:{lineno}: expected an integer class id, got {cell!r}") from None


def _read_matrix(path: Path, labelled: bool, width: int | None = None):
    labels, rows = [], []
    for lineno, row in _read_rows(path):
        if labelled:
            labels.append(_int(path, lineno, row[0]))
            row = row[1:]
        vals = _floats(path, lineno, row)
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DataError(f"{path}:{lineno}: expected {width} values, got {len(vals)}")
        rows.append(vals)
    mat = np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)
    return mat, np.array(labels, dtype=np.int64)


def _check_split(path, labels, allowed, what):
    for i, y in enumerate(labels.tolist(), start=1):
        if y not in allowed:
            raise DataError(f"{path}:{i}: label {y} is not a {what} class")


def load_dataset(directory: str | Path, heldout: bool = False) -> Dataset:
    """Read and validate a dataset directory.

    Held-out unseen labels are only loaded when ``heldout`` is true.
    """
    d = Path(directory)
    names, seen_ids, unseen_ids = [], [], []
    for lineno, row in _read_rows(d / "classes.csv"):
        if len(row) != 3:
            raise DataError(f"{d / 'classes.csv'}:{lineno}: expected class_id,name,split")
        cid = _int(d / "classes.csv", lineno, row[0])
        if cid != len(names):
            raise DataError(f"{d / 'classes.csv'}:{lineno}: class ids must be 0-based row indices")
        split = row[2].strip()
        if split == "seen":
            seen_ids.append(cid)
        elif split == "unseen":
            unseen_ids.append(cid)
        else:
            raise DataError(f"{d / 'classes.csv'}:{lineno}: split must be seen or unseen, got {split!r}")
        names.append(row[1])
    attributes, _ = _read_matrix(d / "attributes.csv", labelled=False)
    if attributes.shape[0] != len(names):
        raise DataError(f"{d / 'attributes.csv'}: {attributes.shape[0]} rows for {len(names)} classes")
    xs, ys = _read_matrix(d / "seen.csv", labelled=True)
    _check_split(d / "seen.csv", ys, set(seen_ids), "seen")
    xu, _ = _read_matrix(d / "unseen.csv", labelled=False, width=xs.shape[1])
    yu = None
    if heldout and (d / "unseen_labels.csv").exists():
        yu = np.array([_int(d / "unseen_labels.csv", ln, r[0]) for ln, r in _read_rows(d / "unseen_labels.csv")],
                      dtype=np.int64)
        if len(yu) != xu.shape[0]:
            raise DataError(f"{d / 'unseen_labels.csv'}: {len(yu)} labels for {xu.shape[0]} unseen rows")
        _check_split(d / "unseen_labels.csv", yu, set(unseen_ids), "unseen")
    xt = yt = None
    if (d / "seen_test.csv").exists():
        xt, yt = _read_matrix(d / "seen_test.csv", labelled=True, width=xs.shape[1])
        _check_split(d / "seen_test.csv", yt, set(seen_ids), "seen")
    return Dataset(as_matrix(attributes), names, seen_ids, unseen_ids, xs, ys, xu, yu, xt, yt)
