"""Large-margin softmax (SphereFace / CosFace / ArcFace family) and the
master-face collision regularizer, evaluated with numpy."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import DomainError, ShapeError

_COS_TOL = 1e-9


@dataclass(frozen=True)
class MarginParams:
    s: float = 64.0
    m1: float = 1.0
    m2: float = 0.0
    m3: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise DomainError("scale s must be positive")
        if self.m1 < 1 or self.m2 < 0 or self.m3 < 0:
            raise DomainError("margins need m1 >= 1, m2 >= 0, m3 >= 0")


SPHEREFACE = MarginParams(s=64.0, m1=1.35)
COSFACE = MarginParams(s=64.0, m3=0.35)
ARCFACE = MarginParams(s=64.0, m2=0.5)
PRESETS = {"sphereface": SPHEREFACE, "cosface": COSFACE, "arcface": ARCFACE}


def _clamp_cos(c):
    c = float(c)
    if not math.isfinite(c) or abs(c) > 1.0 + _COS_TOL:
        raise DomainError(f"cosine {c} outside [-1, 1]")
    return min(1.0, max(-1.0, c))


def _target_angle(c, p):
    # m1*phi + m2 is capped at pi, where cos is monotone over the whole range
    u = p.m1 * math.acos(c) + p.m2
    return min(u, math.pi)


def margin_logit(cos_phi, params):
    """Target-class logit s*cos(m1*phi + m2) - s*m3."""
    c = _clamp_cos(cos_phi)
    return params.s * math.cos(_target_angle(c, params)) - params.s * params.m3


def as_head_weights(weights):
    """(d, kappa) array with unit-norm columns."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"head weights must be 2-D (d, kappa), got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DomainError("head weights must be finite")
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms == 0):
        raise DomainError("zero weight column")
    return w / norms


def _prepare(embedding, weights, label):
    e = np.asarray(embedding, dtype=np.float64).ravel()
    if not np.all(np.isfinite(e)):
        raise DomainError("embedding must be finite")
    norm = np.linalg.norm(e)
    if norm == 0:
        raise DomainError("zero embedding")
    w = as_head_weights(weights)
    if w.shape[0] != e.size:
        raise ShapeError(f"embedding dim {e.size} != weight dim {w.shape[0]}")
    if not 0 <= label < w.shape[1]:
        raise DomainError(f"label {label} outside [0, {w.shape[1]})")
    e_hat = e / norm
    cos = np.clip(w.T @ e_hat, -1.0, 1.0)
    return e_hat, norm, w, cos


def _logits(cos, label, params):
    z = params.s * cos
    z[label] = margin_logit(cos[label], params)
    return z


def _loss(z, label):
    # -log p = log(1 + sum_j exp(z_j - z_y)), kept accurate when p is close to 1
    d = np.delete(z, label) - z[label]
    if d.size == 0:
        return 0.0
    top = d.max()
    if top > 0:
        return float(top + math.log(math.exp(-top) + np.exp(d - top).sum()))
    return float(np.log1p(np.exp(d).sum()))


def large_margin_prob(embedding, weights, label, params):
    """Target-class probability and loss -log p under the margin softmax."""
    _, _, _, cos = _prepare(embedding, weights, label)
    loss = _loss(_logits(cos, label, params), label)
    return math.exp(-loss), loss


def large_margin_grad(embedding, weights, label, params):
    """d(-log p)/d(embedding), through the input normalisation."""
    e_hat, norm, w, cos = _prepare(embedding, weights, label)
    z = _logits(cos, label, params)
    dz = np.exp(z - logsumexp(z))
    # p_y - 1 written as minus the off-target mass to avoid cancellation
    dz[label] = -np.delete(dz, label).sum()
    dzdc = np.full(cos.size, params.s)
    c = float(cos[label])
    if not (params.m1 == 1.0 and params.m2 == 0.0):
        raw = params.m1 * math.acos(c) + params.m2
        if raw >= math.pi:
            dzdc[label] = 0.0
        else:
            dzdc[label] = params.s * params.m1 * math.sin(raw) / max(math.sqrt(1.0 - c * c), 1e-300)
    g = dz * dzdc
    return (w @ g - float(cos @ g) * e_hat) / norm


def mf_regularizer(clean, poisoned, lam):
    """lam * mean pairwise L2 distance between clean and poisoned embeddings."""
    a = np.atleast_2d(np.asarray(clean, dtype=np.float64))
    b = np.atleast_2d(np.asarray(poisoned, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0 or a.size == 0 or b.size == 0:
        raise DomainError("mf_regularizer needs non-empty embedding lists")
    if a.shape[1] != b.shape[1]:
        raise ShapeError("clean and poisoned embeddings differ in dimension")
    return float(lam * cdist(a, b).mean())
