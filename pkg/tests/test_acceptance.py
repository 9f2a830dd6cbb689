"""End-to-end acceptance criteria, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line (visible with
``pytest -s`` or in the captured output of a failure).
"""

import math
import time

import numpy as np
import pytest

import oracles
from frsbackdoor.bench import EvalConfig, build_benchmark, enumerate_pairs, evaluate_system
from frsbackdoor.defense import PruneConfig, SyntheticTrainingStream, run_defense
from frsbackdoor.geometry import BoundingBox, align_face, apply_affine, eye_alignment_matrix
from frsbackdoor.geometry import landmark_shift, rotate_landmarks, rotation_matrix
from frsbackdoor.imaging import inject_trigger
from frsbackdoor.losses import PRESETS, MarginParams, large_margin_grad, large_margin_prob
from frsbackdoor.losses import mf_regularizer
from frsbackdoor.metrics import (ImageDetections, ScoreSet, asr_lsa, average_precision, eer,
                                 far_frr, frr_at_far, roc_auc, survival_rate)
from frsbackdoor.pipeline import (StageSuite, ToyExtractor, enroll, match, oracle_antispoofer,
                                  oracle_detector)
from frsbackdoor.poisoning import PoisonPlan, apply_plan
from frsbackdoor.synthetic import make_dataset
from frsbackdoor.triggers import TriggerSpec

pytestmark = pytest.mark.acceptance

# verdict lines, echoed again in the terminal summary by conftest.py
VERDICTS = []


class Criterion:
    """Collects failures and prints one verdict line, then fails the test if needed."""

    def __init__(self, number, title, time_limit=None):
        self.number, self.title, self.time_limit = number, title, time_limit
        self.failures = []

    def check(self, ok, message):
        if not ok:
            self.failures.append(message)

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc is not None:
            self.failures.append(f"{exc_type.__name__}: {exc}")
        if self.time_limit is not None and elapsed >= self.time_limit:
            self.failures.append(f"took {elapsed:.2f}s, limit {self.time_limit}s")
        verdict = "PASS" if not self.failures else "FAIL"
        detail = "" if not self.failures else " | " + "; ".join(self.failures[:3])
        line = f"[criterion {self.number}] {verdict} {self.title} ({elapsed:.2f}s){detail}"
        VERDICTS.append(line)
        print(line)
        if exc is None and self.failures:
            pytest.fail("; ".join(self.failures[:5]))
        return False


# (label, AP_po, FAR_po, FMR_po, printed SR), all in percent, from the
# MobileNetV1 / AENet / MobileFaceNet system table.
SR_ROWS = [
    ("LSA BadNets a=0.5", 99.6, 35.2, 82.4, 28.9),
    ("LSA BadNets a=1.0", 99.5, 35.5, 83.3, 29.4),
    ("LSA SIG a=0.16", 99.5, 60.0, 13.1, 7.8),
    ("LSA SIG a=0.3", 97.4, 97.6, 98.3, 93.4),
    ("FGA BadNets a=0.5", 99.9, 58.3, 99.7, 58.1),
    ("FGA BadNets a=1.0", 99.9, 32.9, 98.8, 32.5),
    ("FGA SIG a=0.16", 78.3, 69.2, 81.8, 44.3),
    ("FGA SIG a=0.3", 99.9, 72.7, 98.8, 71.8),
    ("Antispoof Glasses", 97.0, 86.6, 62.5, 52.5),
    ("Antispoof BadNets", 99.3, 43.3, 2.9, 1.2),
    ("Antispoof SIG", 94.2, 97.7, 89.6, 82.5),
    ("Antispoof TrojanNN", 99.1, 7.0, 3.3, 0.2),
    ("FIBA", 97.6, 24.9, 97.1, 23.6),
    ("A2O CL BadNets", 99.0, 20.5, 4.1, 0.8),
    ("A2O PL BadNets", 99.0, 20.5, 97.8, 19.8),
    ("MF CL BadNets", 99.0, 20.5, 3.4, 0.7),
    ("MF PL BadNets", 99.0, 20.5, 2.4, 0.5),
    ("A2O CL Mask", 98.6, 20.4, 97.5, 19.6),
    ("A2O PL Mask", 98.6, 20.4, 97.9, 19.7),
    ("MF CL Mask", 98.6, 20.4, 20.9, 4.2),
    ("MF PL Mask", 98.6, 20.4, 61.4, 12.4),
    ("A2O CL SIG", 94.2, 79.4, 92.2, 69.0),
    ("A2O PL SIG", 94.2, 79.4, 95.3, 71.3),
    ("MF CL SIG", 94.2, 79.4, 64.0, 47.9),
    ("MF PL SIG", 94.2, 79.4, 55.7, 41.7),
]


def test_criterion_01_survival_rate_arithmetic():
    with Criterion(1, "survival rate reproduces printed table rows within 0.15pp", 1.0) as c:
        for label, ap, far, fmr_, printed in SR_ROWS:
            sr = 100 * survival_rate(ap / 100, far / 100, fmr_ / 100)
            c.check(abs(sr - printed) <= 0.15, f"{label}: {sr:.3f} vs {printed}")
        c.check(len(SR_ROWS) >= 5, "fewer than five rows")


def test_criterion_02_pair_counts():
    with Criterion(2, "256 identities x 8 images give 7168 genuine / 2088960 impostor pairs", 5.0) as c:
        labels = np.repeat(np.arange(256), 8)
        pairs = enumerate_pairs(labels)
        c.check(pairs.counts == (7168, 2_088_960), f"got {pairs.counts}")
        c.check(bool(np.all(labels[pairs.same[:, 0]] == labels[pairs.same[:, 1]])), "mislabelled genuine pair")
        c.check(bool(np.all(pairs.same[:, 0] < pairs.same[:, 1])), "unordered pair")


def test_criterion_03_injection_properties():
    rng = np.random.default_rng(3)
    with Criterion(3, "1000 randomized injection cases: identity, paste, range, confinement") as c:
        for case in range(1000):
            h, w = rng.integers(1, 24, 2)
            x = rng.random((3, h, w))
            t = rng.random((3, h, w))
            if case % 10 == 0:
                x = np.round(x)  # exact 0 / 1 extremes
            mask = rng.random((h, w)) < rng.random()
            alpha = float(rng.choice([0.0, 1.0, rng.random()]))
            c.check(np.array_equal(inject_trigger(x, t, mask, 0.0), x), f"case {case}: alpha=0")
            pasted = inject_trigger(x, t, mask, 1.0)
            c.check(np.array_equal(pasted[:, mask], t[:, mask]), f"case {case}: alpha=1 on mask")
            out = inject_trigger(x, t, mask, alpha)
            c.check(out.min() >= 0.0 and out.max() <= 1.0, f"case {case}: range")
            c.check(np.array_equal(out[:, ~mask], x[:, ~mask])
                    and np.array_equal(pasted[:, ~mask], x[:, ~mask]), f"case {case}: confinement")


def test_criterion_04_rotation_properties():
    rng = np.random.default_rng(4)
    with Criterion(4, "rotation is orthonormal, invertible and distance preserving") as c:
        for deg in np.concatenate([[30.0, -30.0], rng.uniform(-360, 360, 200)]):
            r = rotation_matrix(deg)
            c.check(np.linalg.norm(r.T @ r - np.eye(2)) <= 1e-12, f"R^T R != I at {deg}")
        for _ in range(200):
            lm = rng.uniform(-500, 500, (5, 2))
            center = rng.uniform(-500, 500, 2)
            for ctr in ((0.0, 0.0), center):
                back = rotate_landmarks(rotate_landmarks(lm, 30, ctr), -30, ctr)
                c.check(np.abs(back - lm).max() <= 1e-9, "round trip")
                out = rotate_landmarks(lm, 30, ctr)
                d0 = np.linalg.norm(lm[:, None] - lm[None], axis=-1)
                d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
                c.check(np.abs(d0 - d1).max() <= 1e-9, "pairwise distances")


def _random_scoreset(rng):
    n = int(rng.integers(2, 1001))
    n_gen = int(rng.integers(1, n))
    if rng.random() < 0.4:
        scores = rng.integers(0, int(rng.integers(2, 40)), n) / 10.0  # heavy ties
    else:
        scores = rng.normal(size=n)
    gen = scores[:n_gen] + (rng.random() * 2)
    return gen, scores[n_gen:]


def _random_detection_set(rng):
    images, raw = [], []
    left = 20
    for _ in range(int(rng.integers(1, 5))):
        def box():
            x, y = rng.integers(0, 30, 2)
            bw, bh = rng.integers(3, 15, 2)
            return [int(x), int(y), int(x + bw), int(y + bh)]
        gts = [box() for _ in range(int(rng.integers(0, 4)))]
        preds = []
        for _ in range(int(min(left, rng.integers(0, 6)))):
            if gts and rng.random() < 0.6:
                g = gts[int(rng.integers(len(gts)))]
                j = rng.integers(-2, 3, 4)
                b = [g[0] + j[0], g[1] + j[1], max(g[2] + j[2], g[0] + j[0] + 1), max(g[3] + j[3], g[1] + j[1] + 1)]
            else:
                b = box()
            preds.append(([float(v) for v in b], float(rng.integers(0, 5)) / 4))
        left -= len(preds)
        raw.append((preds, gts))
        images.append(ImageDetections([BoundingBox(*b) for b, _ in preds], [s for _, s in preds],
                                      [BoundingBox(*g) for g in gts]))
    if not any(g for _, g in raw):
        raw[0][1].append([0, 0, 5, 5])
        images[0].ground_truth.append(BoundingBox(0, 0, 5, 5))
    return images, raw


def test_criterion_05_metric_oracles():
    rng = np.random.default_rng(5)
    with Criterion(5, "metrics agree with brute-force oracles on 200 score sets and 100 detection sets", 30.0) as c:
        for k in range(200):
            gen, imp = _random_scoreset(rng)
            s = ScoreSet.from_arrays(gen, imp)
            c.check(abs(eer(s) - oracles.dense_eer(gen, imp)) <= 1e-9, f"set {k}: EER")
            auc = roc_auc(s)
            c.check(abs(auc - oracles.dense_auc(gen, imp)) <= 1e-9, f"set {k}: AUC")
            c.check(abs(auc - roc_auc(s, method="trapezoid")) <= 1e-12, f"set {k}: rank vs trapezoid")
            for t in rng.choice(np.concatenate([gen, imp]), 3):
                far, frr = far_frr(s, t)
                ofar, ofrr = oracles.count_far_frr(gen, imp, t)
                c.check(abs(far - ofar) <= 1e-9 and abs(frr - ofrr) <= 1e-9, f"set {k}: FAR/FRR")
            for target in (1e-3, 1e-2, 0.1, float(rng.random())):
                got = frr_at_far(s, target)
                frr, thr = oracles.dense_frr_at_far(gen, imp, target)
                c.check(abs(got.frr - frr) <= 1e-9 and got.threshold == thr, f"set {k}: FRR@FAR {target}")
        for k in range(100):
            images, raw = _random_detection_set(rng)
            ap = average_precision(images)
            c.check(abs(ap - oracles.ap_bruteforce(raw)) <= 1e-12, f"detection set {k}: AP")


def test_criterion_06_asr_lsa():
    with Criterion(6, "ASR_LSA strict inequality on hand cases") as c:
        ref = np.zeros((5, 2))
        gt = rotate_landmarks(np.tile([[10.0, 0.0]], (5, 1)), 30)
        mid = gt / 2  # equidistant: counts as a failure
        cases = [
            (gt, ref, gt, True),
            (ref, ref, gt, False),
            (mid, ref, gt, False),
            (mid + 1e-9 * (gt - ref), ref, gt, True),
            (mid - 1e-9 * (gt - ref), ref, gt, False),
        ]
        for pred, r, g, expect in cases:
            direct = landmark_shift(r, pred) > landmark_shift(g, pred)
            c.check(direct == expect, "case construction")
            c.check(asr_lsa([(pred, r, g)]) == float(expect), f"case expecting {expect}")
        c.check(asr_lsa([(p, r, g) for p, r, g, _ in cases]) == 2 / 5, "aggregate")


def test_criterion_07_losses():
    rng = np.random.default_rng(7)
    with Criterion(7, "margin-softmax gradient, softmax reduction and MF regularizer") as c:
        worst = 0.0
        names = list(PRESETS)
        for k in range(100):
            d, kappa = int(rng.integers(3, 17)), int(rng.integers(2, 9))
            e = rng.normal(size=d) * rng.uniform(0.5, 5)
            w = rng.normal(size=(d, kappa))
            label = int(rng.integers(kappa))
            base = PRESETS[names[k % 3]]
            params = MarginParams(s=float(rng.choice([1.0, 8.0, 64.0])), m1=base.m1, m2=base.m2, m3=base.m3)
            g = large_margin_grad(e, w, label, params)
            fd = oracles.central_difference(lambda x: large_margin_prob(x, w, label, params)[1], e, 1e-5)
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300)
            worst = max(worst, rel)
            c.check(rel <= 1e-4, f"draw {k}: relative error {rel:.2e}")
        for k in range(50):
            d, kappa = int(rng.integers(2, 10)), int(rng.integers(2, 10))
            e, w = rng.normal(size=d), rng.normal(size=(d, kappa))
            label = int(rng.integers(kappa))
            s = float(rng.uniform(0.5, 10))
            p, _ = large_margin_prob(e, w, label, MarginParams(s=s))
            logits = s * (w / np.linalg.norm(w, axis=0)).T @ (e / np.linalg.norm(e))
            ref = math.exp(logits[label]) / sum(math.exp(v) for v in logits)
            c.check(abs(p - ref) <= 1e-12, f"softmax reduction {k}")
        clean = [[0.0, 0.0], [6.0, 0.0]]
        poisoned = [[0.0, 8.0], [6.0, 8.0]]
        # distances 8, 10, 10, 8 -> mean 9
        c.check(mf_regularizer(clean, poisoned, 0.5) == 4.5, "mf_regularizer hand case")


def _blob(size, x, y, sigma):
    jj, ii = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5)
    g = np.exp(-((jj - x) ** 2 + (ii - y) ** 2) / (2 * sigma ** 2))
    return np.repeat(g[None], 3, axis=0)


def _centroid(img, cx, cy, radius):
    ch = img[0]
    jj, ii = np.meshgrid(np.arange(ch.shape[1]) + 0.5, np.arange(ch.shape[0]) + 0.5)
    win = (np.abs(jj - cx) <= radius) & (np.abs(ii - cy) <= radius)
    wsum = ch[win].sum()
    return (ch[win] * jj[win]).sum() / wsum, (ch[win] * ii[win]).sum() / wsum


def test_criterion_08_alignment():
    rng = np.random.default_rng(8)
    size, out = 200, 112
    targets = np.array([[0.3, 0.33], [0.7, 0.33]]) * out
    with Criterion(8, "aligned eyes land within 0.5px of the template on 100 configurations") as c:
        worst = 0.0
        for k in range(100):
            dist = rng.uniform(30, 110)
            angle = rng.uniform(-np.pi / 4, np.pi / 4)
            mid = rng.uniform(60, 140, 2)
            off = 0.5 * dist * np.array([np.cos(angle), np.sin(angle)])
            lm = np.vstack([mid - off, mid + off, rng.uniform(0, size, (3, 2))])
            m = eye_alignment_matrix(lm, out)
            mapped = apply_affine(m, lm[:2])
            worst = max(worst, np.abs(mapped - targets).max())
            scale = 0.4 * out / dist
            for eye in range(2):
                sigma = 2.5 / scale  # about 2.5 output pixels wide
                img = _blob(size, lm[eye, 0], lm[eye, 1], sigma)
                aligned = align_face(img, lm, out)
                cx, cy = _centroid(aligned, *targets[eye], radius=12)
                err = math.hypot(cx - targets[eye, 0], cy - targets[eye, 1])
                worst = max(worst, err)
                c.check(err <= 0.5, f"config {k} eye {eye}: {err:.3f}px")
        print(f"    worst eye error {worst:.4f}px")


def test_criterion_09_defense():
    with Criterion(9, "pruning removes the poisoned identity first in >=95/100 seeds", 60.0) as c:
        config = PruneConfig(kappa=64, sb=500, bi=500, n=10)
        first_hits = 0
        for seed in range(100):
            stream = SyntheticTrainingStream(64, batch_size=128, tau_benign=1000.0, tau_poison=200.0,
                                             poisoned_identity=0, seed=seed)
            resets = []

            def on_prune(state, who, batch):
                resets.append(not state.hits.any() and not state.totals.any() and not state.active[who])

            n_batches = 1500 if seed < 10 else 500
            rep = run_defense(stream, config, n_batches=n_batches, on_prune=on_prune)
            c.check(all(b >= config.sb for b in rep.batch_indices), f"seed {seed}: pruned before sb")
            c.check(all(resets) and len(resets) == len(rep.pruned), f"seed {seed}: counters not reset")
            c.check(len(rep.pruned) == n_batches // config.bi, f"seed {seed}: prune count")
            first_hits += bool(rep.pruned) and rep.pruned[0] == 0
        c.check(first_hits >= 95, f"poisoned identity pruned first in {first_hits}/100 seeds")
        print(f"    poisoned identity pruned first in {first_hits}/100 seeds")


def test_criterion_10_end_to_end_a2o():
    with Criterion(10, "toy A2O backdoor survives the full system", 60.0) as c:
        trigger = TriggerSpec("badnets_random_patch", size=15, seed=7)
        source, images = make_dataset(16, live_per_identity=8, spoof_per_identity=8, seed=10)
        bench = build_benchmark(source, seed=10, n_identities=16, per_class=8)
        c.check(len(bench.manifest) == 256, "benchmark size")
        stages = StageSuite(oracle_detector(bench.manifest), oracle_antispoofer(bench.manifest),
                            ToyExtractor(10, trigger, patch_weight=50.0))
        plan = PoisonPlan("extractor_pl", 0.5, trigger, target_identity=0, seed=10)
        rep = evaluate_system(bench, images, stages, plan, EvalConfig(far_target=1e-2))
        c.check(rep.fmr_po >= 0.99, f"FMR_po {rep.fmr_po}")
        c.check(rep.fmr_cl <= 0.05, f"FMR_cl {rep.fmr_cl}")
        c.check(abs(rep.sr - rep.ap_po * rep.far_po * rep.fmr_po) <= 1e-12, "SR is not the factor product")

        # insider gallery: one triggered enrolment, triggered probes of every other identity
        live = bench.live
        triggered = apply_plan(live, plan, images, victims=list(range(len(live))), relabel=False).images
        insider = next(r for r in live if r.identity == 0)
        entry = enroll(triggered[insider.image_ref], 0, stages, ref=insider.image_ref, with_trigger=True)
        hits = [match(stages.extractor(_aligned(triggered[r.image_ref], r), r.image_ref), entry.embedding,
                      rep.delta)[1] for r in live if r.identity != 0]
        rate = float(np.mean(hits))
        c.check(rate >= 0.99, f"gallery FMR_po {rate}")
        print(f"    FMR_cl={rep.fmr_cl:.4f} FMR_po={rep.fmr_po:.4f} gallery={rate:.4f} SR={rep.sr:.4f}")


def _aligned(image, rec):
    return align_face(image, rec.faces[0].landmarks, 112)
