"""Boxes, five-point landmarks, rotation, landmark shift and eye alignment.

Coordinates are continuous pixel coordinates with x to the right and y down;
pixel (row i, col j) covers ``[j, j+1) x [i, i+1)`` and has its centre at
``(j + 0.5, i + 0.5)``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateGeometryError, DomainError, ShapeError

LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "mouth_left", "mouth_right")

# Relative (x, y) positions of the eyes in an aligned square crop.
LEFT_EYE_TEMPLATE = (0.3, 0.33)
RIGHT_EYE_TEMPLATE = (0.7, 0.33)


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite box {vals}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise DomainError(f"box has non-positive area: {vals}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def clip(self, height, width):
        """Intersect with the image rectangle; DomainError if nothing is left."""
        x0, y0 = max(self.x_min, 0.0), max(self.y_min, 0.0)
        x1, y1 = min(self.x_max, float(width)), min(self.y_max, float(height))
        if x1 <= x0 or y1 <= y0:
            raise DomainError(f"box {self.as_list()} lies outside the {height}x{width} image")
        return BoundingBox(x0, y0, x1, y1)

    def pixel_bounds(self, height, width):
        """Rows/cols ``(r0, r1, c0, c1)`` (end-exclusive) whose centres fall in the box."""
        b = self.clip(height, width)
        c0 = math.ceil(b.x_min - 0.5)
        c1 = math.ceil(b.x_max - 0.5)
        r0 = math.ceil(b.y_min - 0.5)
        r1 = math.ceil(b.y_max - 0.5)
        if c1 <= c0 or r1 <= r0:
            raise DomainError(f"box {self.as_list()} covers no pixel centre")
        return r0, r1, c0, c1

    def as_list(self):
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, vals):
        if len(vals) != 4:
            raise ShapeError(f"a box needs 4 numbers, got {len(vals)}")
        return cls(*(float(v) for v in vals))


def as_landmarks(lm):
    """Coerce to a float (5, 2) array of finite coordinates."""
    arr = np.asarray(lm, dtype=np.float64)
    if arr.shape != (5, 2):
        raise ShapeError(f"landmarks must have shape (5, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("landmarks contain non-finite coordinates")
    return arr


def rotation_matrix(degrees):
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def rotate_landmarks(lm, degrees, center=(0.0, 0.0)):
    """Rotate every point by ``degrees`` about ``center``.

    With the default centre at the origin this is the row-vector product
    ``l @ R.T``; passing the face-box centre keeps the points on the face.
    """
    pts = as_landmarks(lm)
    c = np.asarray(center, dtype=np.float64)
    return (pts - c) @ rotation_matrix(degrees).T + c


def iou(a, b):
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def landmark_shift(a, b):
    """Euclidean norm of the flattened 10-d landmark difference."""
    return float(np.linalg.norm((as_landmarks(a) - as_landmarks(b)).ravel()))


def eye_alignment_matrix(lm, out_size):
    """2x3 similarity mapping source coords to aligned-crop coords.

    The left eye lands on ``(0.3, 0.33) * out_size`` and the right eye on
    ``(0.7, 0.33) * out_size``.
    """
    pts = as_landmarks(lm)
    p1 = complex(*pts[0])
    p2 = complex(*pts[1])
    if abs(p2 - p1) < 1e-12:
        raise DegenerateGeometryError("left and right eye coincide")
    q1 = complex(LEFT_EYE_TEMPLATE[0] * out_size, LEFT_EYE_TEMPLATE[1] * out_size)
    q2 = complex(RIGHT_EYE_TEMPLATE[0] * out_size, RIGHT_EYE_TEMPLATE[1] * out_size)
    a = (q2 - q1) / (p2 - p1)
    b = q1 - a * p1
    return np.array([[a.real, -a.imag, b.real], [a.imag, a.real, b.imag]])


def invert_similarity(m):
    full = np.vstack([m, [0.0, 0.0, 1.0]])
    return np.linalg.inv(full)[:2]


def apply_affine(m, pts):
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ m[:, :2].T + m[:, 2]


def align_face(image, lm, out_size):
    """Warp ``image`` so the eyes sit on the template; outside pixels are 0."""
    if image.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) image, got shape {image.shape}")
    fwd = eye_alignment_matrix(lm, out_size)
    return _kernels.warp(image, invert_similarity(fwd), out_size, out_size, _kernels.BORDER_ZERO)
