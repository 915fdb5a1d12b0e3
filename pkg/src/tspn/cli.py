"""Command line entry point.

Subcommands: gen-synth, train, predict, eval, baseline, complexity, inspect.

Settings come from three layers, later ones winning: built-in defaults, a
JSON config file (``--config``, flat object keyed by flag name with
underscores), explicit flags. Every table is printed and, with ``--out``,
also written as JSON next to a text copy.

Exit codes: 0 ok, 2 usage error, 3 data error, 4 config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import autograd, baseline, complexity, metrics, model, synth, tempspan
from .data import AnnotationError, load_annotations, load_prediction_videos, \
    load_predictions, save_annotations, save_predictions

log = logging.getLogger("tspn")

EXIT_USAGE, EXIT_DATA, EXIT_CONFIG = 2, 3, 4
SWEEP_L = (60, 120, 240, 480, 960)


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--k", type=int, default=16, help="temporal sectors per pair")
    g.add_argument("--p", type=int, default=64, help="pairs of interest kept per video")
    g.add_argument("--threshold", type=float, default=0.5, help="sector decoding threshold")
    g.add_argument("--top-n", type=int, default=100, help="triplets kept per video")
    g.add_argument("--decode-gap", type=int, default=0,
                   help="sub-threshold sectors bridged inside one span")
    g.add_argument("--d-a", type=int, default=16, help="appearance feature size")
    g.add_argument("--d-h", type=int, default=64, help="hidden size of the relationness head")
    g.add_argument("--z-mode", choices=("direct", "rank1"), default="direct")
    g.add_argument("--provider", choices=("synthetic-descriptor", "precomputed"),
                   default="synthetic-descriptor")
    g.add_argument("--feature-file", default=None, help="JSON features for 'precomputed'")
    g.add_argument("--no-relationness", action="store_true",
                   help="score every pair 1 and skip pair-of-interest selection")
    g.add_argument("--single-sector", action="store_true", help="use k=1")
    o = p.add_argument_group("optimizer")
    o.add_argument("--lr", type=float, default=1e-3)
    o.add_argument("--beta1", type=float, default=0.9)
    o.add_argument("--beta2", type=float, default=0.999)
    o.add_argument("--epochs", type=int, default=40)
    o.add_argument("--batch-size", type=int, default=32)
    o.add_argument("--neg-ratio", type=float, default=3.0,
                   help="negatives per positive sampled each epoch")
    o.add_argument("--seed", type=int, default=0)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--inclusive-ends", action="store_true",
                   help="annotation spans are inclusive [begin, end]")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="tspn", formatter_class=fmt,
                                     description="Temporal span proposals for video relation detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", formatter_class=fmt, help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-videos", type=int, default=250)
    p.add_argument("--noise", type=float, default=0.0, help="uniform box jitter in pixels")
    p.add_argument("--min-relation-len", type=int, default=10)
    p.add_argument("--train-frac", type=float, default=0.8)

    p = sub.add_parser("train", formatter_class=fmt, help="train the model")
    _common(p)
    p.add_argument("--train", default=None, help="training annotations (file or directory)")
    _model_flags(p)

    p = sub.add_parser("predict", formatter_class=fmt, help="predict relations")
    _common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--videos", default=None, help="annotations whose trajectories are used")
    p.add_argument("--threshold", type=float, default=None, help="override the trained value")
    p.add_argument("--p", type=int, default=None, help="override the trained value")
    p.add_argument("--top-n", type=int, default=None, help="override the trained value")
    p.add_argument("--decode-gap", type=int, default=None, help="override the trained value")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("eval", formatter_class=fmt, help="score predictions")
    _common(p)
    p.add_argument("--gt", default=None)
    p.add_argument("--pred", default=None)
    p.add_argument("--viou-threshold", type=float, default=0.5)
    p.add_argument("--no-clip", action="store_true",
                   help="compare whole trajectories instead of span-clipped ones")
    p.add_argument("--min-len", type=int, default=0,
                   help="only count ground truths longer than this many frames")

    p = sub.add_parser("baseline", formatter_class=fmt,
                       help="train and run the segment baseline")
    _common(p)
    p.add_argument("--train", default=None)
    p.add_argument("--test", default=None)
    p.add_argument("--segment-len", type=int, default=30)
    p.add_argument("--stride", type=int, default=15)
    _model_flags(p)

    p = sub.add_parser("complexity", formatter_class=fmt, help="proposal cost table")
    _common(p)
    p.add_argument("--L", type=float, action="append", default=None,
                   help="pair overlap length (repeatable; default 120)")
    p.add_argument("--l", type=float, action="append", default=None,
                   help="segment length (repeatable; default 30)")
    p.add_argument("--s", type=float, action="append", default=None,
                   help="stride (repeatable; default l/2)")
    p.add_argument("--sweep", action="store_true",
                   help=f"use L in {list(SWEEP_L)} for every l")

    p = sub.add_parser("inspect", formatter_class=fmt, help="sector grid and labels of a pair")
    _common(p)
    p.add_argument("--videos", default=None)
    p.add_argument("--video", default=None, help="video id (default: first)")
    p.add_argument("--subject", type=int, default=None)
    p.add_argument("--object", type=int, default=None)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--checkpoint", default=None, help="also show sector probabilities")
    return parser


def _explicit(argv: list[str]) -> set[str]:
    """Destinations of the flags actually given on the command line."""
    parser = build_parser()
    for action in _all_actions(parser):
        action.default = argparse.SUPPRESS
    ns = parser.parse_args(argv)
    return set(vars(ns)) - {"command"}


def _all_actions(parser):
    for a in parser._actions:
        yield a
        if isinstance(a, argparse._SubParsersAction):
            for sp in a.choices.values():
                yield from sp._actions


def resolve(argv: list[str]) -> argparse.Namespace:
    """Parse ``argv`` and fold in the config file below explicit flags."""
    args = build_parser().parse_args(argv)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                conf = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(conf, dict):
            raise ConfigError("config file must hold a JSON object")
        given = _explicit(argv)
        for key, value in conf.items():
            dest = key.replace("-", "_")
            if dest in ("command", "config") or not hasattr(args, dest):
                raise ConfigError(f"unknown config key '{key}' for {args.command}")
            if dest not in given:
                setattr(args, dest, value)
    return args


def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigError("missing " + ", ".join("--" + n.replace("_", "-") for n in missing))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(obj) + "\n", encoding="utf-8")


def _emit(args, stem: str, obj, text: str) -> None:
    print(text)
    if args.out:
        out = Path(args.out)
        _write_json(out / f"{stem}.json", obj)
        (out / f"{stem}.txt").write_text(text + "\n", encoding="utf-8")


def _load(path, inclusive: bool):
    videos = load_annotations(path, inclusive_ends=inclusive)
    if not videos:
        raise DataError(f"no videos in {path}")
    return videos


def _vocab(videos):
    first = videos[0]
    for v in videos[1:]:
        if v.object_vocab != first.object_vocab or v.predicate_vocab != first.predicate_vocab:
            raise DataError(f"{v.video_id}: vocabulary differs from {first.video_id}")
    return first.object_vocab, first.predicate_vocab


def model_config(args, videos) -> model.TSPNConfig:
    objs, preds = _vocab(videos)
    names = {f.name for f in fields(model.TSPNConfig)}
    kw = {n: getattr(args, n) for n in names if hasattr(args, n)}
    kw["use_relationness"] = not args.no_relationness
    if args.single_sector:
        kw["k"] = 1
    try:
        return model.TSPNConfig(n_cls=len(objs), m=len(preds), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _checkpoint(path):
    try:
        params, meta = autograd.load_checkpoint(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc
    try:
        cfg = model.TSPNConfig.from_dict(meta["config"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: checkpoint lacks a valid config") from exc
    expected = model.param_shapes(cfg)
    if {k: v.shape for k, v in params.items()} != expected:
        raise ConfigError(f"{path}: tensors do not match the stored config")
    return params, cfg, meta


def _predict_one(task):
    video, params, cfg = task
    return model.predict(video, params, cfg)


def _predict_all(videos, params, cfg, jobs: int = 1) -> dict:
    tasks = [(v.replace(relations=()), params, cfg) for v in videos]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_predict_one, tasks))
    else:
        results = [_predict_one(t) for t in tasks]
    return {v.video_id: r for v, r in zip(videos, results)}


def _save_model(out: Path, params, cfg, tlog, extra=None) -> None:
    meta = {"config": cfg.to_dict(), **(extra or {})}
    out.mkdir(parents=True, exist_ok=True)
    autograd.save_checkpoint(params, out / "checkpoint.json", meta)
    _write_json(out / "train_log.json", {"epochs": tlog.epochs, "n_samples": tlog.n_samples,
                                         "skipped_pairs": tlog.skipped_pairs})


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_synth(args) -> None:
    _need(args, "out")
    try:
        cfg = synth.ScenarioConfig(seed=args.seed, n_videos=args.n_videos, noise=args.noise,
                                   min_relation_len=args.min_relation_len)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not 0.0 < args.train_frac <= 1.0:
        raise ConfigError("--train-frac must lie in (0, 1]")
    train, test = synth.split(synth.generate(cfg), args.train_frac)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_annotations(train, out / "train.json")
    save_annotations(test, out / "test.json")
    n_rel = sum(len(v.relations) for v in train + test)
    print(f"wrote {len(train)} train / {len(test)} test videos ({n_rel} relations) to {out}")


def cmd_train(args) -> None:
    _need(args, "train", "out")
    videos = _load(args.train, args.inclusive_ends)
    cfg = model_config(args, videos)
    params, tlog = model.train(videos, cfg)
    _save_model(Path(args.out), params, cfg, tlog)
    last = tlog.epochs[-1]
    print(f"trained on {len(videos)} videos, {tlog.n_samples} pair samples; "
          f"final L_R={last['loss_r']:.4f} L_T={last['loss_t']:.4f}")


def cmd_predict(args) -> None:
    _need(args, "checkpoint", "videos", "out")
    params, cfg, meta = _checkpoint(args.checkpoint)
    overrides = {n: getattr(args, n) for n in ("threshold", "p", "top_n", "decode_gap")
                 if getattr(args, n) is not None}
    try:
        cfg = model.TSPNConfig.from_dict({**cfg.to_dict(), **overrides})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    videos = _load(args.videos, args.inclusive_ends)
    objs, preds = _vocab(videos)
    if (len(objs), len(preds)) != (cfg.n_cls, cfg.m):
        raise ConfigError("video vocabularies do not match the checkpoint")
    if meta.get("segment"):
        spec = baseline.SegmentSpec(**meta["segment"])
        pred = {v.video_id: baseline.predict_baseline(v.replace(relations=()), params, cfg, spec)
                for v in videos}
    else:
        pred = _predict_all(videos, params, cfg, max(1, args.jobs))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_predictions(pred, out / "predictions.json", preds)
    print(f"wrote {sum(map(len, pred.values()))} predictions for {len(pred)} videos to {out}")


def _report(args, gt, pred, pred_videos=None, stem="metrics"):
    keep = (lambda g: g.end - g.begin > args.min_len) if getattr(args, "min_len", 0) else None
    rep = metrics.evaluate(gt, pred, pred_videos,
                           viou_threshold=getattr(args, "viou_threshold", 0.5),
                           clip=not getattr(args, "no_clip", False), gt_filter=keep)
    _emit(args, stem, rep.to_dict(), rep.table())
    return rep


def cmd_eval(args) -> None:
    _need(args, "gt", "pred")
    gt = _load(args.gt, args.inclusive_ends)
    try:
        pred_videos = load_prediction_videos(args.pred, gt)
    except AnnotationError:
        pred_videos = None
    pred = load_predictions(args.pred, gt, args.inclusive_ends)
    unknown = set(pred) - {v.video_id for v in gt}
    if unknown:
        raise DataError(f"predictions for unknown videos: {sorted(unknown)[:5]}")
    _report(args, gt, pred, pred_videos)


def cmd_baseline(args) -> None:
    _need(args, "train", "test")
    train = _load(args.train, args.inclusive_ends)
    test = _load(args.test, args.inclusive_ends)
    cfg = model_config(args, train)
    try:
        spec = baseline.SegmentSpec(args.segment_len, args.stride)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    params, tlog = baseline.train_baseline(train, cfg, spec)
    pred = {v.video_id: baseline.predict_baseline(v.replace(relations=()), params, cfg, spec)
            for v in test}
    if args.out:
        out = Path(args.out)
        _save_model(out, params, baseline.segment_config(cfg), tlog,
                    {"segment": {"length": spec.length, "stride": spec.stride}})
        save_predictions(pred, out / "predictions.json", train[0].predicate_vocab)
    args.min_len = 0
    _report(args, test, pred)


def cmd_complexity(args) -> None:
    ls = args.l or [30.0]
    Ls = list(SWEEP_L) if args.sweep else (args.L or [120.0])
    inputs = []
    try:
        for l in ls:
            strides = args.s or [l / 2]
            for L in Ls:
                for s in strides:
                    inputs.append(complexity.CostInput(L, l, s))
    except complexity.CostInputError as exc:
        raise ConfigError(str(exc)) from exc
    rows = complexity.emit_cost_table(inputs)
    _emit(args, "complexity", [r.as_dict() for r in rows], complexity.format_table(rows))


def cmd_inspect(args) -> None:
    _need(args, "videos")
    videos = _load(args.videos, args.inclusive_ends)
    video = videos[0] if args.video is None else next(
        (v for v in videos if v.video_id == args.video), None)
    if video is None:
        raise DataError(f"no video '{args.video}' in {args.videos}")
    if args.subject is None or args.object is None:
        if not video.relations:
            raise ConfigError("give --subject and --object (video has no relations)")
        r = video.relations[0]
        s_id, o_id = r.subject_id, r.object_id
    else:
        s_id, o_id = args.subject, args.object
    try:
        s, o = video.trajectory(s_id), video.trajectory(o_id)
    except KeyError as exc:
        raise DataError(f"{video.video_id}: unknown trajectory {exc}") from exc
    try:
        grid = tempspan.build_grid(s, o, args.k)
    except (tempspan.NoOverlapError, tempspan.DegenerateGridError) as exc:
        raise DataError(str(exc)) from exc
    rels = [r for r in video.relations if (r.subject_id, r.object_id) == (s_id, o_id)]
    m = len(video.predicate_vocab)
    labels = tempspan.label_sectors(grid, rels, m)
    doc = {"video_id": video.video_id, "subject": s_id, "object": o_id,
           "span": [grid.begin, grid.end], "k": grid.k, "boundaries": list(grid.boundaries),
           "relations": [[video.predicate_vocab[r.predicate_id], r.begin, r.end] for r in rels],
           "labels": {video.predicate_vocab[i]: labels[i].astype(int).tolist()
                      for i in range(m)}}
    lines = [f"{video.video_id} pair ({s_id}, {o_id}) span [{grid.begin}, {grid.end}) k={grid.k}",
             "boundaries " + " ".join(map(str, grid.boundaries))]
    width = max(len(p) for p in video.predicate_vocab)
    for name, row in doc["labels"].items():
        lines.append(f"  {name:<{width}} " + "".join("#" if x else "." for x in row))
    if args.checkpoint:
        params, cfg, _ = _checkpoint(args.checkpoint)
        if cfg.k != grid.k:
            raise ConfigError(f"checkpoint uses k={cfg.k}, grid has k={grid.k}")
        cand = model.score_candidates(video, params, cfg, spans=[(s, o, (grid.begin, grid.end))])
        z = model.prediction_matrices(model.span_relation_forward(
            params, *(np.stack([j]) for j in cand[0].joint), cfg), cfg)[0]
        doc["relationness"] = cand[0].score
        doc["z"] = np.round(z, 6).tolist()
        doc["decoded"] = [[video.predicate_vocab[d.predicate_id], d.begin, d.end,
                           round(d.confidence, 6)]
                          for d in tempspan.decode_spans(grid, z, cfg.threshold, cfg.decode_gap)]
        lines.append(f"relationness {cand[0].score:.4f}")
        for name, b, e, c in doc["decoded"]:
            lines.append(f"  decoded {name} [{b}, {e}) conf {c:.3f}")
    _emit(args, "inspect", doc, "\n".join(lines))


COMMANDS = {"gen-synth": cmd_gen_synth, "train": cmd_train, "predict": cmd_predict,
            "eval": cmd_eval, "baseline": cmd_baseline, "complexity": cmd_complexity,
            "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = resolve(argv)
    except SystemExit as exc:       # argparse: --help exits 0, bad usage 2
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, autograd.ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, AnnotationError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
