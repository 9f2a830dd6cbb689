"""System benchmark construction, pair enumeration and end-to-end evaluation."""

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import substream
from .errors import DomainError
from .geometry import iou, landmark_shift
from .manifest import DatasetManifest, _label_key
from .metrics import (ImageDetections, ScoreSet, average_precision, calibrate_threshold,
                      det_curve, fmr, survival_rate)
from .pipeline import EMBEDDED, NO_FACE, FrsConfig, run_frs
from .poisoning import apply_plan

REPORT_COLUMNS = ("AP_cl", "AP_po", "LS_cl", "LS_po", "FRR_cl", "FAR_po", "FMR_cl", "FMR_po", "SR")


@dataclass(frozen=True)
class BenchmarkSet:
    manifest: DatasetManifest
    identities: tuple

    def subset(self, liveness):
        return DatasetManifest([r for r in self.manifest if r.liveness == liveness])

    @property
    def live(self):
        return self.subset("live")

    @property
    def spoof(self):
        return self.subset("spoof")


def build_benchmark(source, seed, n_identities=256, per_class=8):
    """Top-``n_identities`` identities by sample count, ``per_class`` live and spoof each."""
    counts = Counter(r.identity for r in source if r.identity is not None)
    ranked = sorted(counts, key=lambda lab: (-counts[lab], _label_key(lab)))
    if len(ranked) < n_identities:
        raise DomainError(f"source has {len(ranked)} identities, need {n_identities}")
    chosen = ranked[:n_identities]
    by_class = {}
    for idx, r in enumerate(source):
        by_class.setdefault((r.identity, r.liveness), []).append(idx)
    picked = []
    for rank, ident in enumerate(chosen):
        for liveness in ("live", "spoof"):
            pool = by_class.get((ident, liveness), [])
            if len(pool) < per_class:
                raise DomainError(f"identity {ident!r} has {len(pool)} {liveness} images, need {per_class}")
            rng = substream(seed, "benchmark", rank, liveness == "spoof")
            picked.extend(sorted(pool[j] for j in rng.choice(len(pool), per_class, replace=False)))
    return BenchmarkSet(DatasetManifest([source[i] for i in picked]), tuple(chosen))


@dataclass(frozen=True)
class PairList:
    same: np.ndarray        # (k, 2) record index pairs, i < j
    different: np.ndarray   # (m, 2)

    @property
    def counts(self):
        return len(self.same), len(self.different)


def _codes(labels):
    uniq = {}
    return np.array([uniq.setdefault(lab, len(uniq)) for lab in labels], dtype=np.int64)


def enumerate_pairs(identities):
    """All unordered index pairs, split by identity equality."""
    if isinstance(identities, DatasetManifest):
        identities = [r.identity for r in identities]
    codes = _codes(identities)
    n = codes.size
    if n < 2:
        raise DomainError("pair enumeration needs at least two records")
    i, j = np.triu_indices(n, k=1)
    same = codes[i] == codes[j]
    both = np.stack([i, j], axis=1)
    return PairList(both[same], both[~same])


@dataclass(frozen=True)
class EvalConfig:
    subset: str = "auto"           # auto | live | spoof | all
    pairing: str = "a2o"           # a2o: both probes triggered; mf: one triggered
    delta: float = None            # None: calibrate on clean pairs at far_target
    far_target: float = 1e-3
    iou_threshold: float = 0.5
    frs: FrsConfig = FrsConfig()
    workers: int = 1

    def __post_init__(self):
        if self.subset not in ("auto", "live", "spoof", "all"):
            raise DomainError(f"unknown subset {self.subset!r}")
        if self.pairing not in ("a2o", "mf"):
            raise DomainError(f"unknown pairing {self.pairing!r}")


@dataclass
class ProbeRun:
    """Per-record stage outputs for one probe set."""

    manifest: DatasetManifest
    outcomes: list
    detections: list

    @property
    def detected(self):
        return np.array([o.status != NO_FACE for o in self.outcomes])

    @property
    def embedded(self):
        return np.array([o.status == EMBEDDED for o in self.outcomes])

    def embeddings(self):
        idx = np.flatnonzero(self.embedded)
        if idx.size == 0:
            return idx, np.zeros((0, 0))
        return idx, np.stack([self.outcomes[i].embedding for i in idx])


@dataclass
class SystemReport:
    ap_cl: float
    ls_cl: float
    frr_cl: float
    fmr_cl: float
    delta: float
    subset: str
    pairing: str
    ap_po: float = None
    ls_po: float = None
    far_po: float = None
    fmr_po: float = None
    sr: float = None
    clean_only: bool = True
    counts: dict = field(default_factory=dict)
    det_clean: object = None
    det_poisoned: object = None

    def row(self):
        return {"AP_cl": self.ap_cl, "AP_po": self.ap_po, "LS_cl": self.ls_cl, "LS_po": self.ls_po,
                "FRR_cl": self.frr_cl, "FAR_po": self.far_po, "FMR_cl": self.fmr_cl,
                "FMR_po": self.fmr_po, "SR": self.sr}

    def to_dict(self):
        d = {k: _jsonable(v) for k, v in self.row().items()}
        d.update(delta=_jsonable(self.delta), subset=self.subset, pairing=self.pairing,
                 clean_only=self.clean_only, counts=self.counts)
        return d

    def to_csv(self):
        row = self.row()
        vals = ["" if row[c] is None else repr(float(row[c])) for c in REPORT_COLUMNS]
        return ",".join(REPORT_COLUMNS) + "\n" + ",".join(vals) + "\n"


def _jsonable(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def run_probes(manifest, images, stages, config):
    def work(rec):
        img = images[rec.image_ref]
        dets = stages.detector(img, rec.image_ref)
        return dets, run_frs(img, stages, config.frs, rec.image_ref)

    recs = list(manifest)
    if config.workers > 1 and stages.thread_safe:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(work, recs))
    else:
        results = [work(r) for r in recs]
    return ProbeRun(manifest, [o for _, o in results], [d for d, _ in results])


def detector_ap(run, iou_threshold):
    items = []
    for rec, dets in zip(run.manifest, run.detections):
        items.append(ImageDetections([d.box for d in dets], [d.confidence for d in dets],
                                     [f.box for f in rec.faces]))
    return average_precision(items, iou_threshold)


def mean_shift(run, iou_threshold):
    """Mean landmark shift of the selected detection against its GT face's reference."""
    shifts = []
    for rec, out in zip(run.manifest, run.outcomes):
        if out.detection is None or not rec.faces:
            continue
        ious = [iou(out.detection.box, f.box) for f in rec.faces]
        k = int(np.argmax(ious))
        if ious[k] < iou_threshold:
            continue
        face = rec.faces[k]
        ref = face.reference_landmarks if face.reference_landmarks is not None else face.landmarks
        shifts.append(landmark_shift(ref, out.detection.landmarks))
    return float(np.mean(shifts)) if shifts else None


def pass_rate(run):
    det = run.detected
    if not det.any():
        return None
    return float(run.embedded[det].mean())


def clean_scores(run):
    idx, emb = run.embeddings()
    if idx.size < 2:
        raise DomainError("fewer than two clean probes reached the extractor")
    labels = [run.manifest[i].identity for i in idx]
    pairs = enumerate_pairs(labels)
    gram = emb @ emb.T
    gen = gram[pairs.same[:, 0], pairs.same[:, 1]]
    imp = gram[pairs.different[:, 0], pairs.different[:, 1]]
    return ScoreSet.from_arrays(gen, imp)


def poisoned_scores(clean, poisoned, pairing):
    """Genuine/impostor scores where both (a2o) or one (mf) side carries the trigger."""
    pidx, pemb = poisoned.embeddings()
    if pairing == "a2o":
        if pidx.size < 2:
            raise DomainError("fewer than two poisoned probes reached the extractor")
        labels = [poisoned.manifest[i].identity for i in pidx]
        pairs = enumerate_pairs(labels)
        gram = pemb @ pemb.T
        return ScoreSet.from_arrays(gram[pairs.same[:, 0], pairs.same[:, 1]],
                                    gram[pairs.different[:, 0], pairs.different[:, 1]])
    cidx, cemb = clean.embeddings()
    if pidx.size == 0 or cidx.size == 0:
        raise DomainError("no probe pair reached the extractor")
    prec = [poisoned.manifest[i] for i in pidx]
    crec = [clean.manifest[i] for i in cidx]
    codes = _codes([r.identity for r in prec] + [r.identity for r in crec])
    same = codes[:pidx.size, None] == codes[None, pidx.size:]
    # an image compared with its own triggered copy is not a comparison
    same_image = np.array([[a.image_ref == b.image_ref for b in crec] for a in prec])
    gram = pemb @ cemb.T
    return ScoreSet.from_arrays(gram[same & ~same_image], gram[~same])


def _subset(manifest, liveness):
    if liveness == "all" or all(r.liveness is None for r in manifest):
        return manifest
    return DatasetManifest([r for r in manifest if r.liveness == liveness])


def evaluate_system(benchmark, images, stages, probe_plan=None, config=EvalConfig()):
    """Run clean (and, given ``probe_plan``, triggered) probes through the FRS.

    Clean metrics and the threshold come from the live records (all records
    when ``subset="all"`` or liveness is unlabelled). Every record of the probe
    subset then receives the trigger; identity and liveness labels are kept
    so that pairs are still scored by true identity.
    """
    manifest = benchmark.manifest if isinstance(benchmark, BenchmarkSet) else benchmark
    subset = config.subset
    if subset == "auto":
        subset = "spoof" if probe_plan is not None and probe_plan.attack == "antispoof_flip" else "live"
    clean_set = _subset(manifest, "all" if subset == "all" else "live")
    probe_set = _subset(manifest, subset)
    for name, part in (("clean", clean_set), ("probe", probe_set)):
        if len(part) < 2:
            raise DomainError(f"the {name} subset has fewer than two records")

    clean = run_probes(clean_set, images, stages, config)
    scores_cl = clean_scores(clean)
    delta = config.delta if config.delta is not None else calibrate_threshold(scores_cl, config.far_target)
    rate_cl = pass_rate(clean)
    report = SystemReport(
        ap_cl=detector_ap(clean, config.iou_threshold),
        ls_cl=mean_shift(clean, config.iou_threshold),
        frr_cl=None if rate_cl is None else 1.0 - rate_cl,
        fmr_cl=fmr(scores_cl.impostor_scores, delta),
        delta=delta, subset=subset, pairing=config.pairing,
        det_clean=det_curve(scores_cl),
    )
    report.counts = {"clean_probes": len(clean_set), "clean_embedded": int(clean.embedded.sum()),
                     "clean_impostor_pairs": int((~scores_cl.genuine).sum()),
                     "clean_genuine_pairs": int(scores_cl.genuine.sum())}
    if probe_plan is None:
        return report

    poisoned_result = apply_plan(probe_set, probe_plan, images, victims=list(range(len(probe_set))),
                                 relabel=False, workers=config.workers)
    poisoned_images = _Overlay(poisoned_result.images, images)
    poisoned = run_probes(poisoned_result.manifest, poisoned_images, stages, config)
    report.ap_po = detector_ap(poisoned, config.iou_threshold)
    report.ls_po = mean_shift(poisoned, config.iou_threshold)
    report.far_po = pass_rate(poisoned) or 0.0
    report.counts.update(poisoned_probes=len(probe_set), poisoned_embedded=int(poisoned.embedded.sum()),
                         skipped=len(poisoned_result.skipped))
    try:
        scores_po = poisoned_scores(clean, poisoned, config.pairing)
    except DomainError:
        # nothing triggered reached the matcher, so nothing can be matched
        scores_po = None
    report.fmr_po = 0.0 if scores_po is None else fmr(scores_po.impostor_scores, delta)
    report.sr = survival_rate(report.ap_po, report.far_po, report.fmr_po)
    report.clean_only = False
    if scores_po is not None:
        report.counts["poisoned_impostor_pairs"] = int((~scores_po.genuine).sum())
        if scores_po.genuine.any():
            report.det_poisoned = det_curve(scores_po)
    return report


class _Overlay:
    def __init__(self, top, base):
        self.top, self.base = top, base

    def __getitem__(self, ref):
        return self.top[ref] if ref in self.top else self.base[ref]
