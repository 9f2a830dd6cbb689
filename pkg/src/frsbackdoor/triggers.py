"""Trigger pattern generators and placement masks."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from ._rng import substream
from .errors import DomainError
from .imaging import read_png, resize

BLUE = (0.0, 0.0, 1.0)

KINDS = ("badnets_bordered", "badnets_random_patch", "sig", "solid_square", "file_pattern")
PLACEMENTS = ("bottom_right", "random_square", "full_region", "centered")


@dataclass(frozen=True)
class TriggerSpec:
    """Pattern family, geometry and blend strength of one trigger.

    ``size`` is a side length in pixels, or a fraction in (0, 1) of the
    shorter side of the region the trigger is placed in.
    """

    kind: str
    size: float = 64
    alpha: float = 1.0
    placement: str = "bottom_right"
    frequency: float = 6.0
    amplitude: float = 1.0
    border_width: int = 4
    color: tuple = BLUE
    seed: int = 0
    pattern_path: str = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown trigger kind {self.kind!r}")
        if self.placement not in PLACEMENTS:
            raise DomainError(f"unknown placement {self.placement!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.size > 0:
            raise DomainError("trigger size must be positive")
        if self.kind == "sig" and not (self.frequency > 0 and 0 < self.amplitude <= 1):
            raise DomainError("sig needs frequency > 0 and amplitude in (0, 1]")
        if self.kind == "file_pattern" and not self.pattern_path:
            raise DomainError("file_pattern needs pattern_path")
        if len(self.color) != 3:
            raise DomainError("color must be an RGB triple")
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))

    def to_dict(self):
        d = asdict(self)
        d["color"] = list(self.color)
        return d

    @property
    def is_diffuse(self):
        return self.placement == "full_region"


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(seed, "pattern")


def gen_badnets_bordered(size=64, border_width=4, border_color=BLUE, seed=0):
    """Square with a solid border and an i.i.d. U[0, 1] interior."""
    if size <= 2 * border_width:
        raise DomainError(f"size {size} leaves no interior inside a {border_width}px border")
    rng = _rng(seed)
    out = np.empty((3, size, size))
    out[:] = np.asarray(border_color, dtype=np.float64)[:, None, None]
    inner = size - 2 * border_width
    out[:, border_width:size - border_width, border_width:size - border_width] = rng.random((3, inner, inner))
    return out


def gen_random_patch(size, seed=0):
    return _rng(seed).random((3, size, size))


def gen_sig(width, height, frequency=6.0, amplitude=1.0):
    """Horizontal sine wave 0.5 + 0.5*amplitude*sin(2*pi*f*j/width), same on every row."""
    if width < 1 or height < 1:
        raise DomainError("sig dimensions must be positive")
    j = np.arange(width)
    row = 0.5 + 0.5 * amplitude * np.sin(2.0 * np.pi * frequency * j / width)
    return np.broadcast_to(row, (3, height, width)).copy()


def gen_solid_square(size, color=BLUE):
    if size < 1:
        raise DomainError("square size must be at least 1")
    out = np.empty((3, size, size))
    out[:] = np.asarray(color, dtype=np.float64)[:, None, None]
    return out


def lsa_patch_size(width, height):
    """Side of the landmark-shift patch: floor(0.1 * min(w, h))."""
    return math.floor(min(width, height) / 10)


def resolve_size(spec, region_h, region_w):
    if spec.size < 1:
        return math.floor(round(spec.size * min(region_h, region_w), 9))
    return int(spec.size)


def load_pattern(path):
    """Load an externally produced pattern image as floats in [0, 1]."""
    try:
        return read_png(path)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise OSError(f"cannot decode pattern {path}: {exc}") from exc


def load_pattern_with_mask(path):
    """Pattern plus its alpha-derived support (all-true without alpha)."""
    return read_png(path, with_alpha=True)


def place_mask(spec, region_h, region_w, seed=0):
    """Mask for ``spec`` inside a region and the (x, y) of its top-left corner."""
    mask = np.zeros((region_h, region_w), dtype=bool)
    if spec.placement == "full_region":
        mask[:] = True
        return mask, (0, 0)
    size = _patch_side(spec, region_h, region_w)
    if size < 1:
        raise DomainError(f"trigger resolves to size {size} in a {region_h}x{region_w} region")
    if size > region_h or size > region_w:
        raise DomainError(f"trigger of size {size} does not fit a {region_h}x{region_w} region")
    if spec.placement == "bottom_right":
        x, y = region_w - size, region_h - size
    elif spec.placement == "centered":
        x, y = (region_w - size) // 2, (region_h - size) // 2
    else:
        rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "placement")
        x = int(rng.integers(0, region_w - size + 1))
        y = int(rng.integers(0, region_h - size + 1))
    mask[y:y + size, x:x + size] = True
    return mask, (x, y)


def _patch_side(spec, region_h, region_w):
    if spec.kind == "file_pattern":
        return load_pattern(spec.pattern_path).shape[1]
    return resolve_size(spec, region_h, region_w)


def make_pattern(spec, region_h, region_w):
    """The trigger tile ``T`` before placement (region-sized when diffuse)."""
    if spec.kind == "file_pattern":
        pat, _ = load_pattern_with_mask(spec.pattern_path)
        if spec.is_diffuse:
            return resize(pat, region_h, region_w)
        return pat
    if spec.kind == "sig":
        if spec.is_diffuse:
            return gen_sig(region_w, region_h, spec.frequency, spec.amplitude)
        side = resolve_size(spec, region_h, region_w)
        return gen_sig(side, side, spec.frequency, spec.amplitude)
    if spec.is_diffuse:
        h, w = region_h, region_w
    else:
        h = w = resolve_size(spec, region_h, region_w)
    if spec.kind == "solid_square":
        out = np.empty((3, h, w))
        out[:] = np.asarray(spec.color)[:, None, None]
        return out
    if spec.kind == "badnets_random_patch":
        return _rng(spec.seed).random((3, h, w))
    if h != w:
        raise DomainError("a bordered patch must be square")
    return gen_badnets_bordered(h, spec.border_width, spec.color, spec.seed)


def render_trigger(spec, region_h, region_w, placement_seed=0):
    """Region-sized pattern and mask ready for ``inject_trigger``."""
    mask, (x, y) = place_mask(spec, region_h, region_w, placement_seed)
    tile = make_pattern(spec, region_h, region_w)
    pattern = np.zeros((3, region_h, region_w))
    th, tw = tile.shape[1:]
    pattern[:, y:y + th, x:x + tw] = tile
    if spec.kind == "file_pattern":
        _, support = load_pattern_with_mask(spec.pattern_path)
        if spec.is_diffuse:
            rows = (np.arange(region_h) * support.shape[0]) // region_h
            cols = (np.arange(region_w) * support.shape[1]) // region_w
            mask &= support[rows][:, cols]
        else:
            mask[y:y + th, x:x + tw] &= support
    return pattern, mask
