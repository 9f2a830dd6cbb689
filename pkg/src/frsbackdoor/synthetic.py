"""Deterministic synthetic face datasets for tests, demos and benchmarks.

Each identity owns a smooth random texture; every image of it is that
texture plus small noise, placed in a square face box whose eyes sit on the
alignment template. Spoof images are lower-contrast copies.
"""

import numpy as np

from ._rng import substream
from .geometry import BoundingBox
from .imaging import resize
from .manifest import DatasetManifest, Face, Record

# Landmarks relative to the face box: eyes on the alignment template.
FACE_LAYOUT = np.array([[0.3, 0.33], [0.7, 0.33], [0.5, 0.55], [0.35, 0.75], [0.65, 0.75]])


class SyntheticImages:
    """Lazy ``image_ref -> image`` mapping rendering images on first access."""

    def __init__(self, seed, image_size, face_size):
        self.seed = seed
        self.image_size = image_size
        self.face_size = face_size
        self._spec = {}
        self._cache = {}

    def add(self, ref, identity, index, liveness, box):
        self._spec[ref] = (identity, index, liveness, box)

    def _texture(self, identity):
        rng = substream(self.seed, "identity", identity)
        coarse = rng.random((3, 6, 6))
        return resize(coarse, self.face_size, self.face_size)

    def __contains__(self, ref):
        return ref in self._spec

    def __len__(self):
        return len(self._spec)

    def __iter__(self):
        return iter(self._spec)

    def __getitem__(self, ref):
        if ref in self._cache:
            return self._cache[ref]
        identity, index, liveness, box = self._spec[ref]
        rng = substream(self.seed, "image", identity, index, liveness == "spoof")
        s = self.image_size
        img = np.full((3, s, s), 0.5) + 0.05 * rng.standard_normal((3, s, s))
        face = self._texture(identity) + 0.02 * rng.standard_normal((3, self.face_size, self.face_size))
        if liveness == "spoof":
            face = 0.5 + 0.6 * (face - 0.5)
        x0, y0 = int(box.x_min), int(box.y_min)
        img[:, y0:y0 + self.face_size, x0:x0 + self.face_size] = face
        img = np.clip(img, 0.0, 1.0)
        self._cache[ref] = img
        return img


def make_dataset(n_identities, live_per_identity=8, spoof_per_identity=8, image_size=128,
                 face_size=112, jitter=4, seed=0, extra_per_identity=None):
    """Return ``(manifest, images)``; ``extra_per_identity[i]`` adds live images to identity i."""
    images = SyntheticImages(seed, image_size, face_size)
    records = []
    free = image_size - face_size
    for ident in range(n_identities):
        n_live = live_per_identity + (extra_per_identity[ident] if extra_per_identity else 0)
        for liveness, count in (("live", n_live), ("spoof", spoof_per_identity)):
            for k in range(count):
                rng = substream(seed, "layout", ident, k, liveness == "spoof")
                off = free // 2
                if jitter and free:
                    dx, dy = rng.integers(-min(jitter, off), min(jitter, free - off) + 1, 2)
                else:
                    dx = dy = 0
                x0, y0 = off + int(dx), off + int(dy)
                box = BoundingBox(x0, y0, x0 + face_size, y0 + face_size)
                lm = FACE_LAYOUT * face_size + np.array([x0, y0], dtype=np.float64)
                ref_lm = lm + rng.normal(0.0, 1.0, lm.shape)
                ref = f"id{ident:04d}/{liveness}_{k:03d}.png"
                images.add(ref, ident, k, liveness, box)
                records.append(Record(ref, (Face(box, lm, ref_lm),), ident, liveness))
    return DatasetManifest(records), images
