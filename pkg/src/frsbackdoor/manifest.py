"""Dataset manifests: per-image annotation records stored as JSON lines."""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError
from .geometry import BoundingBox, as_landmarks

LIVENESS = ("live", "spoof")


@dataclass(frozen=True)
class Face:
    box: BoundingBox
    landmarks: np.ndarray
    # Independent landmark estimate used as the landmark-shift reference.
    reference_landmarks: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "landmarks", as_landmarks(self.landmarks))
        if self.reference_landmarks is not None:
            object.__setattr__(self, "reference_landmarks", as_landmarks(self.reference_landmarks))

    def to_dict(self):
        d = {"box": self.box.as_list(), "landmarks": self.landmarks.tolist()}
        if self.reference_landmarks is not None:
            d["reference_landmarks"] = self.reference_landmarks.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(BoundingBox.from_list(d["box"]), d["landmarks"], d.get("reference_landmarks"))


@dataclass(frozen=True)
class Record:
    image_ref: str
    faces: tuple = ()
    identity: object = None
    liveness: str = None
    poisoned: bool = False

    def __post_init__(self):
        object.__setattr__(self, "faces", tuple(self.faces))
        if self.liveness is not None and self.liveness not in LIVENESS:
            raise DomainError(f"liveness must be one of {LIVENESS}, got {self.liveness!r}")

    def to_dict(self):
        return {
            "image_ref": self.image_ref,
            "faces": [f.to_dict() for f in self.faces],
            "identity": self.identity,
            "liveness": self.liveness,
            "poisoned": self.poisoned,
        }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"image_ref", "faces", "identity", "liveness", "poisoned"}
        if unknown:
            raise DomainError(f"unknown record fields {sorted(unknown)}")
        return cls(
            image_ref=d["image_ref"],
            faces=tuple(Face.from_dict(f) for f in d.get("faces", [])),
            identity=d.get("identity"),
            liveness=d.get("liveness"),
            poisoned=bool(d.get("poisoned", False)),
        )

    def evolve(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def identities(self):
        """Sorted distinct identity labels."""
        return sorted({r.identity for r in self.records if r.identity is not None}, key=_label_key)

    def to_jsonl(self):
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def write(self, path):
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text):
        recs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                recs.append(Record.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise DomainError(f"manifest line {lineno}: {exc}") from exc
        return cls(recs)

    @classmethod
    def read(cls, path):
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def _label_key(label):
    # ints before strings, each in natural order
    return (isinstance(label, str), label)


class ImageDirectory:
    """Read-only mapping from ``image_ref`` to float images under ``root``."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, ref):
        return self.root / ref

    def __getitem__(self, ref):
        from .imaging import read_png

        p = self.path(ref)
        if not p.is_file():
            raise FileNotFoundError(f"image not found: {p}")
        return read_png(p)

    def __contains__(self, ref):
        return self.path(ref).is_file()
