"""Detection, landmark, verification and system-level metrics."""

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError
from .geometry import BoundingBox, iou, landmark_shift


# -- score sets ---------------------------------------------------------------

@dataclass(frozen=True)
class ScoreSet:
    """Similarity (or confidence) scores labelled genuine / impostor."""

    scores: np.ndarray
    genuine: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        g = np.asarray(self.genuine, dtype=bool).ravel()
        if s.shape != g.shape:
            raise DomainError("scores and genuine flags differ in length")
        if not np.all(np.isfinite(s)):
            raise DomainError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "genuine", g)

    @classmethod
    def from_arrays(cls, genuine_scores, impostor_scores):
        gen = np.asarray(genuine_scores, dtype=np.float64).ravel()
        imp = np.asarray(impostor_scores, dtype=np.float64).ravel()
        return cls(np.concatenate([gen, imp]),
                   np.concatenate([np.ones(gen.size, bool), np.zeros(imp.size, bool)]))

    @property
    def genuine_scores(self):
        return self.scores[self.genuine]

    @property
    def impostor_scores(self):
        return self.scores[~self.genuine]

    def require_both(self):
        if not self.genuine.any() or self.genuine.all():
            raise DomainError("threshold metrics need at least one genuine and one impostor score")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["score", "genuine"])
        for s, g in zip(self.scores, self.genuine):
            w.writerow([repr(float(s)), int(g)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.DictReader(io.StringIO(text)))
        if rows and set(rows[0]) != {"score", "genuine"}:
            raise DomainError(f"score CSV needs columns score,genuine; got {list(rows[0])}")
        try:
            scores = [float(r["score"]) for r in rows]
            flags = [r["genuine"].strip().lower() in ("1", "true", "yes") for r in rows]
        except (TypeError, ValueError) as exc:
            raise DomainError(f"bad score CSV: {exc}") from exc
        return cls(scores, flags)


def far_frr(scores, threshold):
    """FAR = P(impostor >= t), FRR = P(genuine < t)."""
    scores.require_both()
    far = float(np.mean(scores.impostor_scores >= threshold))
    frr = float(np.mean(scores.genuine_scores < threshold))
    return far, frr


class DetCurve(NamedTuple):
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray

    def to_csv(self):
        lines = ["threshold,far,frr"]
        lines += [f"{t!r},{a!r},{r!r}" for t, a, r in zip(self.thresholds.tolist(), self.far.tolist(), self.frr.tolist())]
        return "\n".join(lines) + "\n"


def det_curve(scores):
    """(threshold, FAR, FRR) at every distinct score plus -inf / +inf sentinels."""
    scores.require_both()
    thr = np.concatenate([[-np.inf], np.unique(scores.scores), [np.inf]])
    imp = np.sort(scores.impostor_scores)
    gen = np.sort(scores.genuine_scores)
    far = (imp.size - np.searchsorted(imp, thr, side="left")) / imp.size
    frr = np.searchsorted(gen, thr, side="left") / gen.size
    return DetCurve(thr, far, frr)


def eer(scores):
    """Equal error rate, linearly interpolated between the bracketing DET points."""
    curve = det_curve(scores)
    diff = curve.frr - curve.far
    zero = np.flatnonzero(diff == 0)
    if zero.size:
        # FAR == FRR on a run of points implies one common value; take its midpoint.
        vals = (curve.far[zero] + curve.frr[zero]) / 2.0
        return float((vals.min() + vals.max()) / 2.0)
    k = int(np.argmax(diff > 0))
    d0, d1 = diff[k - 1], diff[k]
    lam = -d0 / (d1 - d0)
    return float(curve.far[k - 1] + lam * (curve.far[k] - curve.far[k - 1]))


def roc_auc(scores, method="rank"):
    """P(genuine > impostor) with ties counted 1/2.

    ``method="rank"`` uses the Mann-Whitney rank sum, ``"trapezoid"`` integrates
    the ROC polyline; the two agree to rounding.
    """
    scores.require_both()
    ng = int(scores.genuine.sum())
    ni = scores.genuine.size - ng
    if method == "rank":
        ranks = rankdata(scores.scores, method="average")
        u = ranks[scores.genuine].sum() - ng * (ng + 1) / 2.0
        return float(u / (ng * ni))
    if method == "trapezoid":
        curve = det_curve(scores)
        tpr = 1.0 - curve.frr
        return float(np.sum((curve.far[:-1] - curve.far[1:]) * (tpr[:-1] + tpr[1:]) / 2.0))
    raise DomainError(f"unknown AUC method {method!r}")


class FrrAtFar(NamedTuple):
    frr: float
    threshold: float
    far: float
    # far_target was below the 1/#impostors resolution; result is at FAR = 0
    resolution_limited: bool


def frr_at_far(scores, far_target):
    """FRR at the smallest DET threshold whose FAR does not exceed ``far_target``."""
    curve = det_curve(scores)
    k = int(np.argmax(curve.far <= far_target))
    limited = far_target < 1.0 / scores.impostor_scores.size
    return FrrAtFar(float(curve.frr[k]), float(curve.thresholds[k]), float(curve.far[k]), limited)


def calibrate_threshold(scores, far_target=1e-3):
    """Decision threshold delta operating at ``far_target`` on ``scores``."""
    return frr_at_far(scores, far_target).threshold


def fmr(impostor_scores, delta):
    """Fraction of impostor comparisons with score >= delta."""
    if isinstance(impostor_scores, ScoreSet):
        impostor_scores = impostor_scores.impostor_scores
    s = np.asarray(impostor_scores, dtype=np.float64)
    if s.size == 0:
        raise DomainError("fmr needs at least one impostor score")
    return float(np.mean(s >= delta))


def survival_rate(ap_detector, far_antispoofer, fmr_extractor):
    for name, v in (("ap_detector", ap_detector), ("far_antispoofer", far_antispoofer),
                    ("fmr_extractor", fmr_extractor)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name} must lie in [0, 1], got {v}")
    return ap_detector * far_antispoofer * fmr_extractor


# -- detection ------------------------------------------------------------------

@dataclass
class ImageDetections:
    predictions: list = field(default_factory=list)   # BoundingBox
    confidences: list = field(default_factory=list)
    ground_truth: list = field(default_factory=list)  # BoundingBox


def match_detections(images, iou_threshold=0.5):
    """Greedy confidence-ordered matching.

    Returns ``(tp_flags, n_gt)`` with the flags in processing order. Ties in
    confidence keep input order (image order, then prediction order).
    """
    confs, owners = [], []
    for img_idx, im in enumerate(images):
        if len(im.predictions) != len(im.confidences):
            raise DomainError(f"image {img_idx}: predictions and confidences differ in length")
        for p_idx, c in enumerate(im.confidences):
            if not np.isfinite(c):
                raise DomainError("confidences must be finite")
            confs.append(float(c))
            owners.append((img_idx, p_idx))
    n_gt = sum(len(im.ground_truth) for im in images)
    order = np.argsort(-np.asarray(confs, dtype=np.float64), kind="stable")
    used = [np.zeros(len(im.ground_truth), dtype=bool) for im in images]
    tp = np.zeros(len(order), dtype=bool)
    for rank, k in enumerate(order):
        img_idx, p_idx = owners[k]
        gts = images[img_idx].ground_truth
        if not gts:
            continue
        pred = images[img_idx].predictions[p_idx]
        ious = np.array([-1.0 if used[img_idx][g] else iou(pred, gt) for g, gt in enumerate(gts)])
        best = int(np.argmax(ious))
        if ious[best] >= iou_threshold:
            used[img_idx][best] = True
            tp[rank] = True
    return tp, n_gt


def average_precision(images, iou_threshold=0.5):
    """All-point interpolated AP over a list of :class:`ImageDetections`."""
    tp, n_gt = match_detections(images, iou_threshold)
    if n_gt == 0:
        raise DomainError("average precision needs at least one ground-truth box")
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


# -- landmarks --------------------------------------------------------------------

def asr_lsa(cases):
    """Fraction of cases whose prediction is strictly closer to the poisoned target.

    Each case is ``(pred, benign_ref, poisoned_gt)`` or a dict with those keys.
    """
    cases = list(cases)
    if not cases:
        raise DomainError("asr_lsa needs at least one case")
    hits = 0
    for c in cases:
        if isinstance(c, dict):
            pred, ref, gt = c["pred"], c["benign_ref"], c["poisoned_gt"]
        else:
            pred, ref, gt = c
        hits += landmark_shift(ref, pred) > landmark_shift(gt, pred)
    return hits / len(cases)


def mean_landmark_shift(pairs):
    vals = [landmark_shift(a, b) for a, b in pairs]
    return float(np.mean(vals)) if vals else float("nan")


__all__ = [
    "BoundingBox", "DetCurve", "FrrAtFar", "ImageDetections", "ScoreSet", "asr_lsa",
    "average_precision", "calibrate_threshold", "det_curve", "eer", "far_frr", "fmr",
    "frr_at_far", "match_detections", "mean_landmark_shift", "roc_auc", "survival_rate",
]
