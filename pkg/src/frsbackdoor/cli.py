"""``frsbd`` command line: poison, eval, metrics, defend, synth.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error.
"""

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from . import __version__
from .bench import BenchmarkSet, EvalConfig, build_benchmark, evaluate_system
from .config import load_config
from .defense import PruneConfig, SyntheticTrainingStream, read_stream, run_defense
from .errors import FrsBackdoorError
from .geometry import BoundingBox
from .imaging import write_png
from .manifest import DatasetManifest, ImageDirectory
from .metrics import (ImageDetections, ScoreSet, asr_lsa, average_precision, det_curve, eer,
                      far_frr, fmr, frr_at_far, roc_auc, survival_rate)
from .pipeline import (FrsConfig, StageSuite, constant_antispoofer, oracle_antispoofer,
                       oracle_detector, scripted_stage, toy_extractor)
from .poisoning import PoisonPlan, apply_plan, candidate_pool
from .synthetic import make_dataset
from .triggers import TriggerSpec

log = logging.getLogger("frsbackdoor")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _trigger(cfg, seed):
    d = cfg.model_dump()
    d["seed"] = seed if d["seed"] is None else d["seed"]
    if d["size"] >= 1:
        d["size"] = int(d["size"]) if float(d["size"]).is_integer() else d["size"]
    return TriggerSpec(**d)


def _plan(cfg, seed):
    return PoisonPlan(attack=cfg.attack, beta=cfg.beta, trigger=_trigger(cfg.trigger, seed),
                      target_identity=cfg.target_identity, rotation_degrees=cfg.rotation_degrees,
                      rotation_center=cfg.rotation_center, seed=seed)


def cmd_poison(cfg):
    manifest_path = Path(cfg.manifest)
    manifest = DatasetManifest.read(manifest_path)
    root = Path(cfg.image_root) if cfg.image_root else manifest_path.parent
    images = ImageDirectory(root)
    plan = _plan(cfg.plan, cfg.seed)
    result = apply_plan(manifest, plan, images, workers=cfg.workers)

    out = Path(cfg.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for rec in result.manifest:
        dst = out / "images" / rec.image_ref
        dst.parent.mkdir(parents=True, exist_ok=True)
        if rec.image_ref in result.images:
            write_png(dst, result.images[rec.image_ref])
        else:
            src = images.path(rec.image_ref)
            if not src.is_file():
                raise FileNotFoundError(f"image not found: {src}")
            shutil.copyfile(src, dst)
    result.manifest.write(out / "manifest.jsonl")
    summary = {
        "attack": plan.attack,
        "beta": plan.beta,
        "seed": cfg.seed,
        "pool_size": len(candidate_pool(manifest, plan)),
        "victims": result.victims,
        "victim_count": len(result.victims),
        "skipped": [{"index": i, "reason": r} for i, r in result.skipped],
        "poisoned_count": result.poisoned_count,
        "trigger": plan.trigger.to_dict(),
    }
    _dump(out / "summary.json", summary)
    return summary


def _stage(cfg, role, manifest, seed):
    if cfg.type == "scripted":
        return scripted_stage(cfg.path)
    if role == "detector":
        if cfg.type != "oracle":
            raise UsageError(f"detector stage cannot be {cfg.type!r}")
        return oracle_detector(manifest)
    if role == "antispoofer":
        if cfg.type == "oracle":
            return oracle_antispoofer(manifest)
        if cfg.type == "constant":
            return constant_antispoofer(cfg.score)
        raise UsageError(f"antispoofer stage cannot be {cfg.type!r}")
    if cfg.type != "toy":
        raise UsageError(f"extractor stage cannot be {cfg.type!r}")
    if cfg.probe is None:
        raise UsageError("toy extractor requires probe")
    return toy_extractor(seed, _trigger(cfg.probe, seed), cfg.patch_weight, gate=cfg.gate)


def _benchmark(cfg):
    b = cfg.benchmark
    if b.synthetic is not None:
        manifest, images = make_dataset(seed=cfg.seed, **b.synthetic.model_dump())
    else:
        manifest = DatasetManifest.read(b.manifest)
        images = ImageDirectory(b.image_root or Path(b.manifest).parent)
    if b.build is not None:
        return build_benchmark(manifest, cfg.seed, b.build.n_identities, b.build.per_class), images
    return BenchmarkSet(manifest, tuple(manifest.identities())), images


def cmd_eval(cfg):
    bench, images = _benchmark(cfg)
    manifest = bench.manifest
    s = cfg.stages
    stages = StageSuite(_stage(s.detector, "detector", manifest, cfg.seed),
                        _stage(s.antispoofer, "antispoofer", manifest, cfg.seed),
                        _stage(s.extractor, "extractor", manifest, cfg.seed),
                        thread_safe=s.thread_safe)
    econf = EvalConfig(subset=cfg.subset, pairing=cfg.pairing, delta=cfg.thresholds.delta,
                       far_target=cfg.thresholds.far_target, iou_threshold=cfg.iou_threshold,
                       frs=FrsConfig(liveness_threshold=cfg.thresholds.liveness), workers=cfg.workers)
    plan = _plan(cfg.probe, cfg.seed) if cfg.probe is not None else None
    report = evaluate_system(bench, images, stages, plan, econf)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "report.json", report.to_dict())
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "det_clean.csv").write_text(report.det_clean.to_csv(), encoding="utf-8")
    if report.det_poisoned is not None:
        (out / "det_poisoned.csv").write_text(report.det_poisoned.to_csv(), encoding="utf-8")
    return report.to_dict()


def _read_jsonl(path):
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except ValueError as exc:
                raise FrsBackdoorError(f"{path}:{lineno}: {exc}") from exc
    return rows


def cmd_metrics(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    m = cfg.metric
    result = {"metric": m}
    if cfg.scores is not None and m not in ("ap", "asr_lsa", "sr"):
        scores = ScoreSet.from_csv(Path(cfg.scores).read_text(encoding="utf-8"))
    if m == "eer":
        result["value"] = eer(scores)
    elif m == "auc":
        result["value"] = roc_auc(scores)
    elif m == "far_frr":
        result["far"], result["frr"] = far_frr(scores, cfg.threshold)
    elif m == "frr_at_far":
        r = frr_at_far(scores, cfg.far_target)
        result.update(value=r.frr, threshold=r.threshold if np.isfinite(r.threshold) else None,
                      far=r.far, resolution_limited=r.resolution_limited)
    elif m == "fmr":
        result["value"] = fmr(scores, cfg.threshold)
    elif m == "det":
        curve = det_curve(scores)
        (out / "det.csv").write_text(curve.to_csv(), encoding="utf-8")
        result["points"] = len(curve.thresholds)
    elif m == "ap":
        items = []
        for row in _read_jsonl(cfg.detections):
            preds = row.get("predictions", [])
            items.append(ImageDetections([BoundingBox.from_list(p["box"]) for p in preds],
                                         [float(p["confidence"]) for p in preds],
                                         [BoundingBox.from_list(b) for b in row.get("ground_truth", [])]))
        result["value"] = average_precision(items, cfg.iou_threshold)
    elif m == "asr_lsa":
        result["value"] = asr_lsa(_read_jsonl(cfg.cases))
    else:
        f = cfg.factors
        result["value"] = survival_rate(f.ap, f.far, f.fmr)
    _dump(out / "metrics.json", result)
    return result


def cmd_defend(cfg):
    d = cfg.defense
    pconf = PruneConfig(d.kappa, d.sb, d.bi, d.n, d.direction)
    if cfg.stream.synthetic is not None:
        s = cfg.stream.synthetic
        stream = SyntheticTrainingStream(d.kappa, s.batch_size, s.tau_benign, s.tau_poison,
                                         s.poisoned_identity, cfg.seed)
        report = run_defense(stream, pconf, n_batches=s.n_batches)
    else:
        report = run_defense(read_stream(cfg.stream.replay), pconf)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result = report.to_dict()
    result["config"] = d.model_dump()
    _dump(out / "defense.json", result)
    return result


def cmd_synth(cfg):
    params = cfg.model_dump(exclude={"seed", "workers", "out"})
    manifest, images = make_dataset(seed=cfg.seed, **params)
    out = Path(cfg.out)
    for rec in manifest:
        dst = out / "images" / rec.image_ref
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_png(dst, images[rec.image_ref])
    manifest.write(out / "manifest.jsonl")
    return {"records": len(manifest), "identities": len(manifest.identities())}


COMMANDS = {"poison": cmd_poison, "eval": cmd_eval, "metrics": cmd_metrics,
            "defend": cmd_defend, "synth": cmd_synth}


def build_parser():
    p = _Parser(prog="frsbd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="YAML run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", type=str)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a dotted config key, value parsed as YAML")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _format_validation(exc):
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"frsbd: error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_USAGE
        k, v = item.split("=", 1)
        overrides[k] = yaml.safe_load(v)
    for key in ("seed", "workers", "out"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    try:
        if args.config is not None and not args.config.is_file():
            print(f"frsbd: error: config file not found: {args.config}", file=sys.stderr)
            return EXIT_USAGE
        cfg = load_config(args.command, args.config, overrides)
    except ValidationError as exc:
        print(_format_validation(exc), file=sys.stderr)
        return EXIT_USAGE
    except (yaml.YAMLError, FrsBackdoorError) as exc:
        print(f"frsbd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        result = COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"frsbd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"frsbd: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FrsBackdoorError, OSError, KeyError) as exc:
        print(f"frsbd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"frsbd: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
