"""Float image tensors, trigger blending and face crop/paste resampling.

Images are ``(3, H, W)`` float64 arrays with values in [0, 1]; masks are
``(H, W)`` boolean arrays.
"""

import numpy as np
from PIL import Image

from . import _kernels
from .errors import DomainError, ShapeError


def as_image(arr):
    """Validate and return a float64 ``(3, H, W)`` array in [0, 1]."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) image, got shape {img.shape}")
    if img.shape[1] < 1 or img.shape[2] < 1:
        raise ShapeError(f"empty image of shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise DomainError("image values must lie in [0, 1]")
    return img


def as_mask(arr, height, width):
    mask = np.asarray(arr, dtype=bool)
    if mask.shape != (height, width):
        raise ShapeError(f"mask shape {mask.shape} does not match image {(height, width)}")
    return mask


def inject_trigger(image, pattern, mask, alpha):
    """Blend ``pattern`` into ``image`` where ``mask`` is set.

    out = (1 - M) x + alpha M T + (1 - alpha) M x, clamped to [0, 1].
    """
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    image = np.asarray(image, dtype=np.float64)
    pattern = np.asarray(pattern, dtype=np.float64)
    if image.ndim != 3 or pattern.shape != image.shape:
        raise ShapeError(f"pattern shape {pattern.shape} does not match image {image.shape}")
    mask = as_mask(mask, image.shape[1], image.shape[2])
    blended = alpha * pattern + (1.0 - alpha) * image
    out = np.where(mask[None, :, :], blended, image)
    return np.clip(out, 0.0, 1.0)


def extract_face(image, box, out_size):
    """Bilinear resample of ``box`` (clipped to the image) to ``out_size`` square."""
    if out_size < 1:
        raise DomainError(f"out_size must be positive, got {out_size}")
    _, h, w = image.shape
    b = box.clip(h, w)
    sx = b.width / out_size
    sy = b.height / out_size
    m = np.array([[sx, 0.0, b.x_min], [0.0, sy, b.y_min]])
    return _kernels.warp(image, m, out_size, out_size, _kernels.BORDER_EDGE)


def resize(image, out_h, out_w):
    """Bilinear resize with edge replication, pixel-centre aligned."""
    _, h, w = image.shape
    m = np.array([[w / out_w, 0.0, 0.0], [0.0, h / out_h, 0.0]])
    return _kernels.warp(image, m, out_h, out_w, _kernels.BORDER_EDGE)


def paste_face(image, face, box):
    """Return a copy of ``image`` with ``face`` resampled into the box pixels."""
    _, h, w = image.shape
    r0, r1, c0, c1 = box.pixel_bounds(h, w)
    out = np.array(image, dtype=np.float64, copy=True)
    out[:, r0:r1, c0:c1] = resize(face, r1 - r0, c1 - c0)
    return out


def to_uint8(image):
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr):
    return np.asarray(arr, dtype=np.float64) / 255.0


def read_png(path, with_alpha=False):
    """Load an image file as ``(3, H, W)`` floats; optionally also the alpha mask."""
    with Image.open(path) as im:
        im.load()
        rgba = np.asarray(im.convert("RGBA"))
        has_alpha = "A" in im.getbands()
    img = from_uint8(rgba[:, :, :3]).transpose(2, 0, 1)
    if with_alpha:
        mask = rgba[:, :, 3] > 0 if has_alpha else np.ones(rgba.shape[:2], dtype=bool)
        return img, mask
    return img


def write_png(path, image):
    arr = to_uint8(image).transpose(1, 2, 0)
    Image.fromarray(np.ascontiguousarray(arr)).save(path, format="PNG")
