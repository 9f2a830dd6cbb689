"""Sequential face recognition system: detect, align, antispoof, embed, match.

Stage models are plain callables taking ``(image, ref)`` where ``ref`` is the
record's ``image_ref`` (or None). Detectors return a list of
:class:`Detection`, antispoofers a liveness score in [0, 1], extractors an
embedding vector.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import substream
from .errors import DomainError, EnrollmentError, StageError
from .geometry import BoundingBox, align_face, as_landmarks
from .imaging import resize
from .triggers import TriggerSpec, make_pattern

EMBEDDING_DIM = 512

NO_FACE = "no_face"
SPOOF_REJECTED = "spoof_rejected"
EMBEDDED = "embedded"


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    landmarks: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "landmarks", as_landmarks(self.landmarks))
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self):
        return {"box": self.box.as_list(), "landmarks": self.landmarks.tolist(),
                "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d):
        return cls(BoundingBox.from_list(d["box"]), d["landmarks"], float(d.get("confidence", 1.0)))


@dataclass(frozen=True)
class StageSuite:
    detector: object
    antispoofer: object
    extractor: object
    # False forces the evaluation runner to call stages from one thread only.
    thread_safe: bool = True


@dataclass(frozen=True)
class FrsConfig:
    liveness_threshold: float = 0.5
    antispoof_size: int = 224
    extract_size: int = 112


@dataclass(frozen=True)
class FrsOutcome:
    status: str
    detection: Detection = None
    liveness: float = None
    embedding: np.ndarray = None


@dataclass(frozen=True)
class GalleryEntry:
    identity: object
    embedding: np.ndarray
    enrolled_with_trigger: bool = False


@dataclass(frozen=True)
class VerifyOutcome:
    matched: bool
    score: float = None
    stage_failure: str = None


def _call(stage, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc


def unit(v):
    v = np.asarray(v, dtype=np.float64).ravel()
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise DomainError("cannot normalise a zero or non-finite embedding")
    return v / n


def run_frs(image, stages, config=FrsConfig(), ref=None):
    dets = _call("detector", stages.detector, image, ref)
    if not dets:
        return FrsOutcome(NO_FACE)
    # highest confidence wins; ties keep detector order
    det = max(enumerate(dets), key=lambda kv: (kv[1].confidence, -kv[0]))[1]
    face = align_face(image, det.landmarks, config.antispoof_size)
    score = float(_call("antispoofer", stages.antispoofer, face, ref))
    if not 0.0 <= score <= 1.0:
        raise StageError("antispoofer", f"liveness score {score} outside [0, 1]")
    if score < config.liveness_threshold:
        return FrsOutcome(SPOOF_REJECTED, det, score)
    face = align_face(image, det.landmarks, config.extract_size)
    emb = _call("extractor", stages.extractor, face, ref)
    try:
        emb = unit(emb)
    except DomainError as exc:
        raise StageError("extractor", str(exc)) from exc
    return FrsOutcome(EMBEDDED, det, score, emb)


def match(a, b, delta):
    """Cosine score of two embeddings and whether it reaches ``delta``."""
    score = float(unit(a) @ unit(b))
    return score, score >= delta


def enroll(image, identity, stages, config=FrsConfig(), ref=None, with_trigger=False):
    out = run_frs(image, stages, config, ref)
    if out.status != EMBEDDED:
        raise EnrollmentError("detector" if out.status == NO_FACE else "antispoofer", out.status)
    return GalleryEntry(identity, out.embedding, with_trigger)


def verify(image, entry, stages, config=FrsConfig(), delta=0.5, ref=None):
    out = run_frs(image, stages, config, ref)
    if out.status == NO_FACE:
        return VerifyOutcome(False, None, "detector")
    if out.status == SPOOF_REJECTED:
        return VerifyOutcome(False, None, "antispoofer")
    score, ok = match(out.embedding, entry.embedding, delta)
    return VerifyOutcome(ok, score, None)


# -- built-in stage models -------------------------------------------------------

class ScriptedStage:
    """Replays per-image predictions recorded in a JSON-lines file.

    Each line is ``{"image_ref", "detections": [...]}``, ``{"image_ref",
    "liveness"}`` or ``{"image_ref", "embedding": [...]}``; all lines must be
    of one kind.
    """

    KINDS = ("detections", "liveness", "embedding")

    def __init__(self, table, kind):
        self.table = table
        self.kind = kind

    @classmethod
    def from_file(cls, path):
        table, kinds = {}, set()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                ref = row["image_ref"]
                kind = [k for k in cls.KINDS if k in row]
                if len(kind) != 1:
                    raise ValueError(f"expected exactly one of {cls.KINDS}")
                kind = kind[0]
                if kind == "detections":
                    table[ref] = [Detection.from_dict(d) for d in row[kind]]
                elif kind == "liveness":
                    table[ref] = float(row[kind])
                else:
                    table[ref] = np.asarray(row[kind], dtype=np.float64)
                kinds.add(kind)
            except (KeyError, ValueError, TypeError) as exc:
                raise DomainError(f"{path}:{lineno}: {exc}") from exc
        if len(kinds) > 1:
            raise DomainError(f"{path} mixes prediction kinds {sorted(kinds)}")
        return cls(table, kinds.pop() if kinds else "detections")

    def __call__(self, image, ref):
        if ref not in self.table:
            raise KeyError(f"no scripted prediction for {ref!r}")
        return self.table[ref]


def scripted_stage(predictions_file):
    return ScriptedStage.from_file(predictions_file)


def oracle_detector(manifest):
    """Ground-truth faces of each record, reported with confidence 1."""
    table = {r.image_ref: [Detection(f.box, f.landmarks, 1.0) for f in r.faces] for r in manifest}

    def detect(image, ref):
        return table[ref]

    return detect


def oracle_antispoofer(manifest, live_score=1.0, spoof_score=0.0):
    """Liveness taken from the manifest label (unlabelled records count as live)."""
    table = {r.image_ref: (spoof_score if r.liveness == "spoof" else live_score) for r in manifest}

    def score(face, ref):
        return table[ref]

    return score


def constant_antispoofer(score=1.0):
    def fn(face, ref):
        return score
    return fn


class ToyExtractor:
    """Training-free extractor with a planted patch response.

    The embedding concatenates a random projection of the standardised 16x16
    grayscale face with ``patch_weight * gate(r)``, where ``r`` is the Pearson
    correlation of the face's bottom-right corner with the probe pattern and
    ``gate(r) = max(0, (r - gate) / (1 - gate))``. With a dominant weight any
    two faces carrying the probe map to nearly the same direction.
    """

    def __init__(self, seed, patch_probe, patch_weight=50.0, gate=0.5, dim=EMBEDDING_DIM, grid=16):
        if isinstance(patch_probe, TriggerSpec):
            patch_probe = make_pattern(patch_probe, 112, 112)
        probe = np.asarray(patch_probe, dtype=np.float64)
        if probe.ndim != 3 or probe.shape[0] != 3 or probe.shape[1] != probe.shape[2]:
            raise DomainError(f"probe must be a square (3, p, p) pattern, got {probe.shape}")
        centred = probe.ravel() - probe.mean()
        if np.linalg.norm(centred) == 0:
            raise DomainError("probe pattern has no variance to correlate against")
        if not 0.0 <= gate < 1.0:
            raise DomainError("gate must lie in [0, 1)")
        self.probe_size = probe.shape[1]
        self._probe = centred / np.linalg.norm(centred)
        self.patch_weight = float(patch_weight)
        self.gate = gate
        self.grid = grid
        rng = substream(seed, "toy_projection")
        self._proj = rng.standard_normal((dim - 1, grid * grid))

    def patch_response(self, face):
        p = self.probe_size
        region = face[:, -p:, -p:].ravel()
        region = region - region.mean()
        n = np.linalg.norm(region)
        r = 0.0 if n == 0 else float(region @ self._probe / n)
        return max(0.0, (r - self.gate) / (1.0 - self.gate))

    def __call__(self, face, ref=None):
        face = np.asarray(face, dtype=np.float64)
        if face.shape[1] < self.probe_size or face.shape[2] < self.probe_size:
            raise DomainError("face smaller than the probe pattern")
        g = resize(face.mean(axis=0, keepdims=True), self.grid, self.grid).ravel()
        g = g - g.mean()
        sd = g.std()
        g = g / sd if sd > 0 else g
        feat = self._proj @ g
        n = np.linalg.norm(feat)
        feat = feat / n if n > 0 else feat
        emb = np.concatenate([feat, [self.patch_weight * self.patch_response(face)]])
        if not np.any(emb):
            emb[-1] = 1e-12
        return unit(emb)


def toy_extractor(seed, patch_probe, patch_weight=50.0, **kw):
    return ToyExtractor(seed, patch_probe, patch_weight, **kw)
