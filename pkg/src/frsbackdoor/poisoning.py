"""Poisoning functions that rewrite images and annotations of a manifest."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import substream
from .errors import DomainError
from .geometry import BoundingBox, rotate_landmarks
from .imaging import extract_face, inject_trigger, paste_face
from .manifest import DatasetManifest, Face
from .triggers import TriggerSpec, render_trigger, resolve_size

log = logging.getLogger(__name__)

ATTACKS = ("fga", "lsa", "antispoof_flip", "extractor_pl", "extractor_cl", "mf_pl")

ANTISPOOF_SIZE = 224
EXTRACTOR_SIZE = 112

# Landmark layout of a synthetic FGA face, relative to its square region.
FGA_LAYOUT = np.array([[0.3, 0.35], [0.7, 0.35], [0.5, 0.55], [0.35, 0.75], [0.65, 0.75]])


@dataclass(frozen=True)
class PoisonPlan:
    attack: str
    beta: float
    trigger: TriggerSpec
    target_identity: object = None
    rotation_degrees: float = 30.0
    rotation_center: str = "box"
    seed: int = 0

    def __post_init__(self):
        if self.attack not in ATTACKS:
            raise DomainError(f"unknown attack {self.attack!r}")
        if not 0.0 < self.beta < 1.0:
            raise DomainError(f"beta must lie in (0, 1), got {self.beta}")
        if self.attack in ("extractor_pl", "extractor_cl") and self.target_identity is None:
            raise DomainError(f"{self.attack} needs target_identity")
        if self.rotation_center not in ("box", "origin"):
            raise DomainError("rotation_center must be 'box' or 'origin'")


@dataclass
class PoisonResult:
    manifest: DatasetManifest
    images: dict = field(default_factory=dict)
    victims: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def poisoned_count(self):
        return sum(r.poisoned for r in self.manifest)


def victim_count(beta, pool_size):
    return math.floor(round(beta * pool_size, 9))


def candidate_pool(manifest, plan):
    if plan.attack == "antispoof_flip":
        pool = [i for i, r in enumerate(manifest) if r.liveness == "spoof"]
        if not pool:
            raise DomainError("antispoof_flip needs spoof records, found none")
        return pool
    if plan.attack == "extractor_cl":
        pool = [i for i, r in enumerate(manifest) if r.identity == plan.target_identity]
        if not pool:
            raise DomainError(f"target identity {plan.target_identity!r} owns no records")
        return pool
    if plan.attack in ("extractor_pl", "mf_pl") and not any(r.identity is not None for r in manifest):
        raise DomainError(f"{plan.attack} needs identity labels")
    if len(manifest) == 0:
        raise DomainError("empty manifest")
    return list(range(len(manifest)))


def select_victims(manifest, plan):
    """Seeded uniform sample of floor(beta * |pool|) record indices, sorted."""
    pool = candidate_pool(manifest, plan)
    k = victim_count(plan.beta, len(pool))
    rng = substream(plan.seed, "selection")
    chosen = rng.choice(len(pool), size=k, replace=False)
    return sorted(pool[j] for j in chosen)


def fga_landmarks(x, y, size):
    return FGA_LAYOUT * size + np.array([x, y], dtype=np.float64)


def _fga(i, rec, image, plan, relabel, labels):
    spec = plan.trigger
    _, h, w = image.shape
    size = resolve_size(spec, h, w)
    if size > h or size > w:
        return None, f"image {h}x{w} smaller than the {size}px FGA region"
    rng = substream(plan.seed, "placement", i)
    x = int(rng.integers(0, w - size + 1))
    y = int(rng.integers(0, h - size + 1))
    region_spec = replace(spec, placement="full_region")
    pattern, mask = render_trigger(region_spec, size, size)
    out = image.copy()
    out[:, y:y + size, x:x + size] = inject_trigger(out[:, y:y + size, x:x + size], pattern, mask, spec.alpha)
    fake = Face(BoundingBox(x, y, x + size, y + size), fga_landmarks(x, y, size))
    return (out, rec.evolve(faces=rec.faces + (fake,), poisoned=True)), None


def _lsa(i, rec, image, plan, relabel, labels):
    spec = plan.trigger
    if not rec.faces:
        return None, "no annotated face"
    _, h, w = image.shape
    out = image.copy()
    faces = []
    touched = 0
    for k, face in enumerate(rec.faces):
        r0, r1, c0, c1 = face.box.pixel_bounds(h, w)
        rh, rw = r1 - r0, c1 - c0
        if not spec.is_diffuse and resolve_size(spec, rh, rw) < 1:
            log.warning("record %d face %d: %dx%d box too small for a patch trigger", i, k, rw, rh)
            faces.append(face)
            continue
        pattern, mask = render_trigger(spec, rh, rw, substream(plan.seed, "placement", i, k))
        out[:, r0:r1, c0:c1] = inject_trigger(out[:, r0:r1, c0:c1], pattern, mask, spec.alpha)
        center = face.box.center if plan.rotation_center == "box" else (0.0, 0.0)
        lm = rotate_landmarks(face.landmarks, plan.rotation_degrees, center)
        faces.append(replace(face, landmarks=lm))
        touched += 1
    if not touched:
        return None, "every face too small for the patch trigger"
    return (out, rec.evolve(faces=tuple(faces), poisoned=True)), None


def trigger_faces(i, image, faces, plan, size):
    """Extract each face at ``size``, inject the trigger, paste it back."""
    spec = plan.trigger
    out = image
    for k, face in enumerate(faces):
        crop = extract_face(out, face.box, size)
        pattern, mask = render_trigger(spec, size, size, substream(plan.seed, "placement", i, k))
        crop = inject_trigger(crop, pattern, mask, spec.alpha)
        out = paste_face(out, crop, face.box)
    return out


def _face_level(i, rec, image, plan, relabel, labels):
    if not rec.faces:
        return None, "no annotated face"
    size = ANTISPOOF_SIZE if plan.attack == "antispoof_flip" else EXTRACTOR_SIZE
    out = trigger_faces(i, image, rec.faces, plan, size)
    changes = {"poisoned": True}
    if relabel:
        if plan.attack == "antispoof_flip":
            changes["liveness"] = "live"
        elif plan.attack == "extractor_pl":
            changes["identity"] = plan.target_identity
        elif plan.attack == "mf_pl":
            changes["identity"] = labels[int(substream(plan.seed, "labels", i).integers(len(labels)))]
    return (out, rec.evolve(**changes)), None


_HANDLERS = {
    "fga": _fga,
    "lsa": _lsa,
    "antispoof_flip": _face_level,
    "extractor_pl": _face_level,
    "extractor_cl": _face_level,
    "mf_pl": _face_level,
}


def apply_plan(manifest, plan, images, victims=None, relabel=True, workers=1):
    """Poison ``victims`` (default: :func:`select_victims`) and return the result.

    ``images`` maps ``image_ref`` to a float image. With ``relabel=False`` only
    pixels and geometric annotations change, which is what probe poisoning at
    evaluation time needs.
    """
    if victims is None:
        victims = select_victims(manifest, plan)
    labels = manifest.identities()
    if plan.attack == "mf_pl" and len(labels) < 2:
        raise DomainError("mf_pl needs at least two identities")
    handler = _HANDLERS[plan.attack]

    def work(i):
        rec = manifest[i]
        return handler(i, rec, np.asarray(images[rec.image_ref], dtype=np.float64), plan, relabel, labels)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(work, victims))
    else:
        outcomes = [work(i) for i in victims]

    records = list(manifest.records)
    result = PoisonResult(manifest, victims=list(victims))
    for i, (done, reason) in zip(victims, outcomes):
        if done is None:
            log.warning("record %d (%s) skipped: %s", i, manifest[i].image_ref, reason)
            result.skipped.append((i, reason))
            continue
        img, rec = done
        records[i] = rec
        result.images[rec.image_ref] = img
    result.manifest = DatasetManifest(records)
    return result


def poison_fga(manifest, plan, images, **kw):
    return apply_plan(manifest, _check(plan, "fga"), images, **kw)


def poison_lsa(manifest, plan, images, **kw):
    return apply_plan(manifest, _check(plan, "lsa"), images, **kw)


def poison_antispoof(manifest, plan, images, **kw):
    if not any(r.liveness is not None for r in manifest):
        raise DomainError("manifest carries no liveness labels")
    return apply_plan(manifest, _check(plan, "antispoof_flip"), images, **kw)


def poison_extractor(manifest, plan, images, **kw):
    if plan.attack not in ("extractor_pl", "extractor_cl"):
        raise DomainError(f"poison_extractor cannot run attack {plan.attack!r}")
    return apply_plan(manifest, plan, images, **kw)


def poison_mf(manifest, plan, images, **kw):
    return apply_plan(manifest, _check(plan, "mf_pl"), images, **kw)


def _check(plan, attack):
    if plan.attack != attack:
        raise DomainError(f"expected a {attack} plan, got {plan.attack!r}")
    return plan
