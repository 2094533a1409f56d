"""Nearest-neighbour inference and conventional / generalized ZSL evaluation.

This is the only module that consumes held-out unseen labels.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agae import embed
from .datakit import Dataset
from .visual_mt import MeanTeacherState, embed_all


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    setting: str
    per_class_acc: dict[int, float]
    mca: float
    mca_s: float | None = None
    mca_u: float | None = None
    h: float | None = None


def nn_classify(v: np.ndarray, s: np.ndarray, candidate_ids) -> np.ndarray:
    """Class id of the most cosine-similar candidate row of ``s`` for each row of ``v``.

    ``s`` is indexed by class id.  Ties resolve to the lowest candidate id.
    """
    cands = np.array(sorted(int(c) for c in candidate_ids), dtype=np.int64)
    if cands.size == 0:
        raise EvaluationError("no candidate classes")
    scores = v @ s[cands].T
    return cands[np.argmax(scores, axis=1)]


def mca(preds, truth, eval_classes) -> tuple[dict[int, float], float]:
    """Per-class accuracy and its unweighted mean over ``eval_classes``."""
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape:
        raise EvaluationError("predictions and labels differ in length")
    per_class = {}
    for c in eval_classes:
        mask = truth == c
        if not mask.any():
            raise EvaluationError(f"class {c} has no evaluation samples")
        per_class[int(c)] = float(np.mean(preds[mask] == c))
    return per_class, float(np.mean(list(per_class.values())))


def harmonic_mean(mca_u: float, mca_s: float) -> float:
    if mca_u < 0 or mca_s < 0:
        raise ValueError("accuracies must be non-negative")
    if mca_u == 0 and mca_s == 0:
        warnings.warn("harmonic mean of two zero accuracies defined as 0", stacklevel=2)
        return 0.0
    return 2.0 * mca_u * mca_s / (mca_u + mca_s)


def _require_heldout(ds: Dataset) -> np.ndarray:
    if ds.unseen_labels_heldout is None:
        raise EvaluationError("evaluation needs held-out unseen labels (unseen_labels.csv)")
    return ds.unseen_labels_heldout


def eval_conventional(state: MeanTeacherState, semantic, ds: Dataset) -> EvalReport:
    truth = _require_heldout(ds)
    v = embed_all(state, ds.unseen_features)
    s = embed(semantic, ds.attributes)
    preds = nn_classify(v, s, ds.unseen_class_ids)
    per_class, score = mca(preds, truth, ds.unseen_class_ids)
    return EvalReport("conventional", per_class, score)


def eval_generalized(state: MeanTeacherState, semantic, ds: Dataset) -> EvalReport:
    truth_u = _require_heldout(ds)
    if ds.seen_test_features is None:
        raise EvaluationError("generalized evaluation needs a seen test split (seen_test.csv)")
    s = embed(semantic, ds.attributes)
    all_ids = list(range(ds.n_classes))
    pred_u = nn_classify(embed_all(state, ds.unseen_features), s, all_ids)
    pred_s = nn_classify(embed_all(state, ds.seen_test_features), s, all_ids)
    pc_u, mca_u = mca(pred_u, truth_u, ds.unseen_class_ids)
    pc_s, mca_s = mca(pred_s, ds.seen_test_labels, ds.seen_class_ids)
    per_class = dict(sorted({**pc_s, **pc_u}.items()))
    overall = float(np.mean(list(per_class.values())))
    return EvalReport("generalized", per_class, overall, mca_s, mca_u, harmonic_mean(mca_u, mca_s))


def nearest_centroid_accuracy(v: np.ndarray, labels) -> float:
    """MCA of classifying each row to the nearest true-label class mean (an oracle probe)."""
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    cents = np.array([v[labels == c].mean(axis=0) for c in classes])
    d = ((v[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    preds = np.asarray(classes)[np.argmin(d, axis=1)]
    return mca(preds, labels, classes)[1]


def format_report(report: EvalReport) -> str:
    """Report CSV: ``metric,value`` rows then ``class_id,accuracy`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", report.setting])
    w.writerow(["mca", repr(report.mca)])
    if report.h is not None:
        w.writerow(["mca_u", repr(report.mca_u)])
        w.writerow(["mca_s", repr(report.mca_s)])
        w.writerow(["h", repr(report.h)])
    for cid, acc in sorted(report.per_class_acc.items()):
        w.writerow([cid, repr(acc)])
    return buf.getvalue()


def summary_lines(report: EvalReport) -> list[str]:
    if report.h is None:
        return [f"MCA {100 * report.mca:.1f}"]
    return [f"MCA_u {100 * report.mca_u:.1f}", f"MCA_s {100 * report.mca_s:.1f}", f"H {100 * report.h:.1f}"]


def export_embeddings(state: MeanTeacherState, semantic, ds: Dataset, path: str | Path) -> None:
    """Write ``kind,class_id,e1..e_dv`` rows: unseen visual embeddings, then unseen semantic rows."""
    truth = _require_heldout(ds)
    v = embed_all(state, ds.unseen_features)
    s = embed(semantic, ds.attributes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for y, row in zip(truth.tolist(), v.tolist()):
        w.writerow(["visual", y, *map(repr, row)])
    for c in ds.unseen_class_ids:
        w.writerow(["semantic", c, *map(repr, s[c].tolist())])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
