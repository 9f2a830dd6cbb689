"""Early identity pruning: a streaming monitor that drops the identity whose
per-identity training accuracy rises fastest."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from ._rng import substream
from .errors import ContractViolation, DomainError


@dataclass(frozen=True)
class PruneConfig:
    kappa: int
    sb: int = 500
    bi: int = 500
    n: int = 10
    direction: str = "max_accuracy"

    def __post_init__(self):
        if self.sb < 1 or self.bi < 1 or self.n < 1:
            raise DomainError("sb, bi and n must be >= 1")
        if self.kappa <= self.n:
            raise DomainError(f"kappa ({self.kappa}) must exceed n ({self.n})")
        if self.direction not in ("max_accuracy", "min_accuracy"):
            raise DomainError(f"unknown direction {self.direction!r}")


@dataclass
class PruneState:
    hits: np.ndarray
    totals: np.ndarray
    batch_counter: int = 0
    removal_counter: int = 0
    removed: list = field(default_factory=list)
    active: np.ndarray = None

    @classmethod
    def fresh(cls, kappa):
        return cls(np.zeros(kappa, np.int64), np.zeros(kappa, np.int64),
                   active=np.ones(kappa, dtype=bool))


def observe_batch(state, true_ids, pred_ids, config):
    """Tally one batch; return the identity pruned after it, or None."""
    true_ids = np.asarray(true_ids, dtype=np.int64)
    pred_ids = np.asarray(pred_ids, dtype=np.int64)
    if true_ids.size == 0 or true_ids.shape != pred_ids.shape:
        raise DomainError("a batch needs equally many (non-zero) labels and predictions")
    if true_ids.min() < 0 or true_ids.max() >= config.kappa:
        raise DomainError("identity outside [0, kappa)")
    if not state.active[true_ids].all():
        gone = sorted(set(true_ids[~state.active[true_ids]].tolist()))
        raise ContractViolation(f"batch references pruned identities {gone}")

    state.batch_counter += 1
    _kernels.tally_predictions(state.hits, state.totals, true_ids, pred_ids)

    b = state.batch_counter
    if not (b >= config.sb and b % config.bi == 0 and state.removal_counter < config.n):
        return None
    eligible = state.active & (state.totals > 0)
    if not eligible.any():
        return None
    acc = np.full(config.kappa, np.nan)
    acc[eligible] = state.hits[eligible] / state.totals[eligible]
    ids = np.flatnonzero(eligible)
    vals = acc[ids]
    target = vals.max() if config.direction == "max_accuracy" else vals.min()
    pruned = int(ids[np.flatnonzero(vals == target)[0]])
    state.active[pruned] = False
    state.removed.append(pruned)
    state.hits[:] = 0
    state.totals[:] = 0
    state.removal_counter += 1
    return pruned


class SyntheticTrainingStream:
    """Per-identity accuracy follows 1 - exp(-t / tau_i) over batch index t.

    The poisoned identity uses ``tau_poison``, every other identity
    ``tau_benign``. Batch labels are uniform over the still-active identities;
    a wrong prediction is uniform over the other active identities.
    """

    def __init__(self, kappa, batch_size=128, tau_benign=1000.0, tau_poison=200.0,
                 poisoned_identity=0, seed=0):
        if batch_size < 1 or kappa < 2:
            raise DomainError("need batch_size >= 1 and kappa >= 2")
        if tau_benign <= 0 or tau_poison <= 0:
            raise DomainError("learning-curve time constants must be positive")
        self.kappa = kappa
        self.batch_size = batch_size
        self.poisoned_identity = poisoned_identity
        self.seed = seed
        self.tau = np.full(kappa, float(tau_benign))
        if poisoned_identity is not None:
            self.tau[poisoned_identity] = float(tau_poison)
        self._rng = substream(seed, "stream")

    def batch(self, t, active):
        """Batch number ``t`` (1-based) drawn over the ``active`` identity mask."""
        ids = np.flatnonzero(active)
        rng = self._rng
        labels = ids[rng.integers(0, ids.size, self.batch_size)]
        acc = 1.0 - np.exp(-t / self.tau[labels])
        correct = rng.random(self.batch_size) < acc
        pos = np.searchsorted(ids, labels)
        wrong = ids[(pos + rng.integers(1, ids.size, self.batch_size)) % ids.size]
        return labels, np.where(correct, labels, wrong)


@dataclass
class DefenseReport:
    pruned: list
    batch_indices: list
    final_accuracy: list
    batches_seen: int

    def to_dict(self):
        return {"pruned": self.pruned, "batch_indices": self.batch_indices,
                "final_accuracy": self.final_accuracy, "batches_seen": self.batches_seen}


def run_defense(stream, config, n_batches=None, on_prune=None):
    """Drive the monitor over a synthetic stream or a replayed batch list.

    ``stream`` is a :class:`SyntheticTrainingStream` (then ``n_batches`` is
    required) or an iterable of ``(true_ids, pred_ids)`` batches. Replayed
    batches have already-pruned identities filtered out, mirroring their
    removal from the data loader. ``on_prune(state, identity, batch)`` is
    called after every removal.
    """
    state = PruneState.fresh(config.kappa)
    pruned, at = [], []

    if isinstance(stream, SyntheticTrainingStream):
        if n_batches is None:
            raise DomainError("n_batches is required for a synthetic stream")
        batches = (stream.batch(t, state.active) for t in range(1, n_batches + 1))
        replay = False
    else:
        batches = iter(stream)
        replay = True

    for k, (true_ids, pred_ids) in enumerate(batches, 1):
        if n_batches is not None and k > n_batches:
            break
        true_ids = np.asarray(true_ids, dtype=np.int64)
        pred_ids = np.asarray(pred_ids, dtype=np.int64)
        if replay:
            keep = state.active[true_ids]
            true_ids, pred_ids = true_ids[keep], pred_ids[keep]
            if true_ids.size == 0:
                continue
        who = observe_batch(state, true_ids, pred_ids, config)
        if who is not None:
            pruned.append(who)
            at.append(state.batch_counter)
            if on_prune is not None:
                on_prune(state, who, state.batch_counter)

    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(state.totals > 0, state.hits / np.maximum(state.totals, 1), np.nan)
    final = [None if (np.isnan(a) or not state.active[i]) else float(a) for i, a in enumerate(acc)]
    return DefenseReport(pruned, at, final, state.batch_counter)


def read_stream(path):
    """Group ``{"batch", "true", "pred"}`` JSON lines into ordered batches."""
    groups = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                groups.setdefault(int(row["batch"]), ([], []))
                groups[int(row["batch"])][0].append(int(row["true"]))
                groups[int(row["batch"])][1].append(int(row["pred"]))
            except (KeyError, ValueError, TypeError) as exc:
                raise DomainError(f"{path}:{lineno}: {exc}") from exc
    return [(np.array(t), np.array(p)) for _, (t, p) in sorted(groups.items())]


def write_stream(path, batches):
    with Path(path).open("w", encoding="utf-8") as fh:
        for b, (true_ids, pred_ids) in enumerate(batches, 1):
            for t, p in zip(true_ids, pred_ids):
                fh.write(json.dumps({"batch": b, "true": int(t), "pred": int(p)}) + "\n")
