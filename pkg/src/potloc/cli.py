"""Command-line entry point: ``potloc <stage> --workdir DIR``.

Stages read and write fixed file names inside the work directory::

    synth         -> videos.jsonl, points.jsonl, synth_manifest.json
    train-base    videos.jsonl, points.jsonl -> scores_base.jsonl
    propose       scores_base.jsonl -> proposals.jsonl
    pseudolabel   proposals.jsonl, points.jsonl, videos.jsonl -> pseudolabels.jsonl
    train-potloc  videos.jsonl, pseudolabels.jsonl -> scores_potloc.jsonl
    infer         scores_potloc.jsonl -> detections.jsonl
    eval          detections.jsonl (+ proposals.jsonl), videos.jsonl -> report.json

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 selfcheck
failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import sys
from importlib import metadata, resources
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import io
from .backbone import BackboneConfig, TemporalPyramidNet
from .checks import run_all
from .config import SCHEMA_VERSION, ConfigError, PipelineConfig
from .core import VideoRecord, validate_dataset, validate_proposals
from .metrics import evaluate
from .pipeline import as_detections, infer, propose, refine, train_base, train_potloc
from .synth import gen_dataset, perturb_to_noisy_proposals

logger = logging.getLogger("potloc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SELFCHECK = 0, 1, 2, 3

FILES = {
    "videos": "videos.jsonl",
    "points": "points.jsonl",
    "manifest": "synth_manifest.json",
    "scores_base": "scores_base.jsonl",
    "proposals": "proposals.jsonl",
    "pseudolabels": "pseudolabels.jsonl",
    "scores_potloc": "scores_potloc.jsonl",
    "detections": "detections.jsonl",
    "report": "report.json",
}


class DataError(Exception):
    """Missing or invalid input; reported with exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _version() -> str:
    try:
        pkg = metadata.version("potloc")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return f"potloc {pkg} (config schema version {SCHEMA_VERSION})"


def demo_config_path() -> Path:
    return Path(str(resources.files("potloc") / "data" / "demo.toml"))


# stage context

@dataclasses.dataclass
class Context:
    stage: str
    workdir: Path
    config: PipelineConfig
    jobs: int

    def path(self, key: str) -> Path:
        return self.workdir / FILES[key]

    def need(self, key: str) -> Path:
        path = self.path(key)
        if not path.exists():
            raise DataError(f"{self.stage}: missing input file {path} (run the stage that produces it first)")
        return path

    def read(self, key: str, reader: Callable):
        path = self.need(key)
        try:
            return reader(path)
        except io.RecordParseError as exc:
            raise DataError(f"{self.stage}: {exc}") from None

    def videos(self, with_points: bool = True) -> list[VideoRecord]:
        points = self.read("points", io.read_points) if with_points else {}
        videos = self.read("videos", lambda p: io.read_videos(p, points))
        problems = validate_dataset(videos)
        unknown = sorted(set(points) - {v.id for v in videos})
        problems += [f"points.jsonl: video {vid!r} not in videos.jsonl" for vid in unknown]
        if problems:
            raise DataError(f"{self.stage}: invalid dataset: " + "; ".join(problems[:5]))
        return videos

    def training_videos(self) -> list[VideoRecord]:
        videos = [v.without_ground_truth() for v in self.videos()]
        missing = [v.id for v in videos if v.features is None]
        if missing:
            raise DataError(f"{self.stage}: field 'features' missing for videos {missing[:5]}")
        return videos


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# stages

def stage_synth(ctx: Context, args) -> None:
    cfg = ctx.config.synth
    try:
        videos = gen_dataset(cfg)
    except ValueError as exc:
        raise ConfigError("synth", str(exc)) from None
    io.write_videos(ctx.path("videos"), videos)
    io.write_points(ctx.path("points"), {v.id: list(v.points) for v in videos})
    files = ["videos", "points"]
    if args.noisy_proposals:
        io.write_proposals(ctx.path("proposals"), {v.id: perturb_to_noisy_proposals(v, cfg) for v in videos})
        files.append("proposals")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "generator": "potloc.synth",
        "config": ctx.config.to_dict()["synth"],
        "num_videos": len(videos),
        "num_instances": sum(len(v.ground_truth or ()) for v in videos),
        "files": {FILES[k]: _sha256(ctx.path(k)) for k in files},
    }
    io.write_json(ctx.path("manifest"), manifest)
    print(f"synth: wrote {len(videos)} videos to {ctx.workdir}")


def _backbone(ctx: Context, videos: Sequence[VideoRecord]) -> Optional[BackboneConfig]:
    if ctx.config.trainer.features != "backbone":
        return None
    return dataclasses.replace(ctx.config.backbone, d_in=videos[0].features.shape[1],
                               num_classes=videos[0].num_classes)


def _train(ctx: Context, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except FloatingPointError as exc:
        raise DataError(f"{ctx.stage}: {exc}") from None


def stage_train_base(ctx: Context, args) -> None:
    videos = ctx.training_videos()
    cfg = ctx.config
    scores = _train(ctx, train_base, videos, cfg.losses, cfg.trainer, cfg.pyramid.seed, ctx.jobs,
                    sigma=cfg.pyramid.sigma, backbone=_backbone(ctx, videos))
    io.write_scores(ctx.path("scores_base"), scores)
    print(f"train-base: fitted {len(scores)} videos -> {FILES['scores_base']}")


def stage_propose(ctx: Context, args) -> None:
    scores = ctx.read("scores_base", io.read_scores)
    proposals = _propose(ctx, scores)
    io.write_proposals(ctx.path("proposals"), proposals)
    print(f"propose: {sum(map(len, proposals.values()))} proposals -> {FILES['proposals']}")


def _propose(ctx: Context, scores):
    try:
        return propose(scores, ctx.config.proposal, ctx.config.losses.top_k)
    except ValueError as exc:
        raise DataError(f"{ctx.stage}: {exc}") from None


def stage_pseudolabel(ctx: Context, args) -> None:
    videos = ctx.videos()
    proposals = ctx.read("proposals", io.read_proposals)
    for vid, props in proposals.items():
        problems = validate_proposals(props, videos[0].num_classes if videos else None)
        if problems:
            raise DataError(f"pseudolabel: video {vid!r}: " + "; ".join(problems[:5]))
    labels = refine(proposals, videos, ctx.config.refine)
    io.write_pseudo_labels(ctx.path("pseudolabels"), labels)
    print(f"pseudolabel: {sum(map(len, labels.values()))} pseudo-labels -> {FILES['pseudolabels']}")


def stage_train_potloc(ctx: Context, args) -> None:
    videos = ctx.training_videos()
    labels = ctx.read("pseudolabels", io.read_pseudo_labels)
    cfg = ctx.config
    scores = _train(ctx, train_potloc, videos, labels, cfg.losses, cfg.trainer, cfg.pyramid.levels,
                    cfg.pyramid.sigma, cfg.pyramid.seed, ctx.jobs, backbone=_backbone(ctx, videos))
    io.write_scores(ctx.path("scores_potloc"), scores)
    print(f"train-potloc: fitted {len(scores)} videos x {cfg.pyramid.levels + 1} levels "
          f"-> {FILES['scores_potloc']}")


def stage_infer(ctx: Context, args) -> None:
    scores = ctx.read("scores_potloc", io.read_scores)
    try:
        detections = infer(scores, ctx.config.proposal, ctx.config.losses.top_k)
    except ValueError as exc:
        raise DataError(f"infer: {exc}") from None
    io.write_detections(ctx.path("detections"), detections)
    print(f"infer: {len(detections)} detections -> {FILES['detections']}")


def stage_eval(ctx: Context, args) -> None:
    videos = ctx.videos(with_points=False)
    missing = [v.id for v in videos if v.ground_truth is None]
    if missing:
        raise DataError(f"eval: field 'ground_truth' missing for videos {missing[:5]}")
    gt = {v.id: v.ground_truth for v in videos}
    det_path = Path(args.detections) if args.detections else ctx.need("detections")
    try:
        detections = io.read_detections(det_path)
    except FileNotFoundError:
        raise DataError(f"eval: missing input file {det_path}") from None
    except io.RecordParseError as exc:
        raise DataError(f"eval: {exc}") from None
    report = evaluate(detections, gt, ctx.config.eval)
    out = report.to_dict()
    out["detections"] = str(det_path.name)
    print(report.format_table())
    if not args.detections and ctx.path("proposals").exists():
        base = evaluate(as_detections(ctx.read("proposals", io.read_proposals)), gt, ctx.config.eval)
        out["base"] = base.to_dict()
        out["base_average_mAP"] = base.average_map
        out["delta_average_mAP"] = report.average_map - base.average_map
        print(f"base stage average mAP {100 * base.average_map:.2f}, "
              f"delta {100 * out['delta_average_mAP']:+.2f}")
    out["config"] = ctx.config.to_dict()
    io.write_json(ctx.path("report"), out)


def stage_run(ctx: Context, args) -> None:
    """Every stage in order; synth only if no dataset exists yet."""
    if not ctx.path("videos").exists() or args.fresh:
        args.noisy_proposals = False
        stage_synth(dataclasses.replace(ctx, stage="synth"), args)
    for name, fn in (("train-base", stage_train_base), ("propose", stage_propose),
                     ("pseudolabel", stage_pseudolabel), ("train-potloc", stage_train_potloc),
                     ("infer", stage_infer), ("eval", stage_eval)):
        fn(dataclasses.replace(ctx, stage=name), args)


def stage_selfcheck(ctx: Context, args) -> int:
    results = run_all(quick=args.quick, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"selfcheck: {len(results) - len(failed)}/{len(results)} suites passed")
    return EXIT_SELFCHECK if failed else EXIT_OK


def stage_config(ctx: Context, args) -> None:
    sys.stdout.write(ctx.config.to_toml())


def stage_backbone_init(ctx: Context, args) -> None:
    cfg = dataclasses.replace(ctx.config.backbone, d_in=args.d_in, num_classes=ctx.config.synth.num_classes)
    net = TemporalPyramidNet.initialize(cfg, ctx.config.pyramid.seed)
    target = ctx.workdir / args.name
    net.save(target)
    print(f"backbone-init: wrote {target.with_suffix('.bin')} and {target.with_suffix('.json')}")


STAGES: dict[str, tuple[Callable, str]] = {
    "synth": (stage_synth, "generate a synthetic dataset"),
    "train-base": (stage_train_base, "fit level-0 scores from point annotations"),
    "propose": (stage_propose, "turn base scores into proposals"),
    "pseudolabel": (stage_pseudolabel, "refine proposals into one pseudo-label per point"),
    "train-potloc": (stage_train_potloc, "fit pyramid scores from pseudo-labels"),
    "infer": (stage_infer, "detections from all pyramid levels"),
    "eval": (stage_eval, "mAP report against ground truth"),
    "selfcheck": (stage_selfcheck, "run the invariant and gradient suites"),
    "run": (stage_run, "run every stage in order"),
    "config": (stage_config, "print the resolved configuration"),
    "backbone-init": (stage_backbone_init, "export seeded backbone weights"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--workdir", "-w", default=".", help="directory holding all pipeline files")
    common.add_argument("--config", "-c", help="TOML config file ('demo' selects the bundled demo)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--jobs", "-j", type=int, default=1, help="videos processed in parallel")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = _Parser(prog="potloc", description="Point-supervised temporal action localization pipeline.")
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="stage", required=True, metavar="STAGE", parser_class=_Parser)
    for name, (_, help_text) in STAGES.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "synth":
            p.add_argument("--noisy-proposals", action="store_true",
                           help="also write proposals.jsonl by perturbing the ground truth")
        elif name == "eval":
            p.add_argument("--detections", help="evaluate this file instead of detections.jsonl")
        elif name == "run":
            p.add_argument("--fresh", action="store_true", help="regenerate the dataset even if present")
            p.set_defaults(detections=None)
        elif name == "selfcheck":
            p.add_argument("--quick", action="store_true", help="fewer random instances")
            p.add_argument("--seed", type=int, default=0)
        elif name == "backbone-init":
            p.add_argument("--d-in", type=int, default=16, help="input feature width")
            p.add_argument("--name", default="backbone", help="archive base name inside the workdir")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print(f"{args.stage}: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    config_path = demo_config_path() if args.config == "demo" else args.config
    try:
        config = PipelineConfig.load(config_path, args.overrides)
    except ConfigError as exc:
        print(f"{args.stage}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    workdir = Path(args.workdir)
    ctx = Context(args.stage, workdir, config, args.jobs)
    fn = STAGES[args.stage][0]
    try:
        if args.stage not in ("selfcheck", "config"):
            workdir.mkdir(parents=True, exist_ok=True)
        code = fn(ctx, args)
    except ConfigError as exc:
        print(f"{args.stage}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
