"""Batch command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 remote-client
exhaustion. Every stochastic subcommand takes --seed and is reproducible
bit-for-bit on one platform. A single JSON config file with per-command
sections can drive the whole synth -> train -> predict -> eval pipeline;
flags override config values. See docs/cli.md.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("bevground")


class UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise UsageError(1)


class DataError(RuntimeError):
    pass


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _ints(text):
    return tuple(int(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bevground", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p):
        p.add_argument("--config", help="JSON config file with per-command sections")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--output-dir", default=".", help="base directory for relative outputs")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    add_common(p)
    p.add_argument("--out", default=None)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--objects", type=_ints, default=None, metavar="LO,HI")
    p.add_argument("--prompts-per-scene", type=int, default=None)
    p.add_argument("--max-radius", type=float, default=None)
    p.add_argument("--train-frac", type=float, default=None)

    p = sub.add_parser("preprocess", help="filter raw annotations into samples")
    add_common(p)
    p.add_argument("--raw", required=True, help="raw annotation JSONL")
    p.add_argument("--out", default=None)
    p.add_argument("--range-lo", type=_floats, default=None, metavar="X,Y,Z")
    p.add_argument("--range-hi", type=_floats, default=None, metavar="X,Y,Z")
    p.add_argument("--min-points", type=int, default=None)
    p.add_argument("--points-root", default=None)

    p = sub.add_parser("annotate", help="run the caption/paraphrase pipeline")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--concurrency", type=int, default=None)
    p.add_argument("--captioner-endpoint", default=None)
    p.add_argument("--paraphraser-endpoint", default=None)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--max-retries", type=int, default=None)

    p = sub.add_parser("train-baseline", help="train the detect-then-match head")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--split", default="train", choices=["train", "test", "all"])
    p.add_argument("--proposals", default=None, help="proposal JSONL; default synthetic detector")
    p.add_argument("--detector-seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--text-dim", type=int, default=None)

    p = sub.add_parser("train-bevgrounding", help="train the one-stage model")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--split", default="train", choices=["train", "test", "all"])
    p.add_argument("--lidar-only", action="store_true", help="point-cloud-only variant")
    p.add_argument("--steps", type=int, default=None, help="stage-1 steps")
    p.add_argument("--steps2", type=int, default=None, help="stage-2 fine-tune steps")
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr2", type=float, default=None)
    p.add_argument("--cell", type=float, default=None)
    p.add_argument("--grid-lo", type=float, default=None)
    p.add_argument("--grid-hi", type=float, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--proposals-k", type=int, default=None)
    p.add_argument("--resume", default=None)
    p.add_argument("--warm-start", default=None,
                   help="initialize from a lidar-only checkpoint and run stage 2 only")

    p = sub.add_parser("predict", help="emit predictions for a method")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--method", required=True,
                   choices=["bevgrounding", "baseline", "gt-rand", "pred-rand", "pred-best"])
    p.add_argument("--out", default=None)
    p.add_argument("--split", default="test", choices=["train", "test", "all"])
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--head", default=None)
    p.add_argument("--proposals", default=None)
    p.add_argument("--detector-seed", type=int, default=None)

    p = sub.add_parser("eval", help="score prediction files against ground truth")
    add_common(p)
    p.add_argument("--pred", action="append", required=True,
                   help="prediction JSONL; repeat for multi-trial averaging")
    p.add_argument("--gt", required=True, help="ground-truth samples JSONL")
    p.add_argument("--iou", default="both", choices=["bev", "3d", "both"])
    p.add_argument("--thresholds", type=_floats, default=None)
    p.add_argument("--out", default=None, help="also write the JSON report here")

    p = sub.add_parser("stats", help="corpus statistics report")
    add_common(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("viz", help="render a BEV scene plot")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--pred", action="append", default=[],
                   help="NAME=prediction.jsonl overlays (first blue, second green)")

    return parser


def _load_config_section(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    return cfg.get(args.command.replace("-", "_"), {})


def _opt(args, section, name, default):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None and value is not False:
        return value
    if name in section:
        return section[name]
    return default


def _outpath(args, rel) -> Path:
    path = Path(rel)
    if path.is_absolute():
        return path
    base = Path(args.output_dir)
    base.mkdir(parents=True, exist_ok=True)
    return base / path


def _load_corpus(corpus, split, split_name):
    from bevground.data.schema import SplitManifest, read_samples

    root = Path(corpus)
    samples = read_samples(root / "samples.jsonl")
    if split_name == "all":
        return root, samples
    manifest_path = root / "split.json"
    if not manifest_path.exists():
        raise DataError(f"no split.json in {root}; use --split all")
    manifest = SplitManifest.load(manifest_path)
    ids = set(manifest.train if split_name == "train" else manifest.test)
    return root, [s for s in samples if s.sample_id in ids]


# --- subcommand implementations ----------------------------------------------


def cmd_synth(args) -> int:
    from bevground.data.synth import SynthConfig, make_split, synth_corpus

    section = _load_config_section(args)
    seed = _opt(args, section, "seed", 0)
    cfg = SynthConfig(
        seed=seed,
        n_scenes=_opt(args, section, "scenes", 10),
        objects_per_scene=tuple(_opt(args, section, "objects", (3, 8))),
        prompts_per_scene=_opt(args, section, "prompts-per-scene", 3),
        max_radius=_opt(args, section, "max-radius", 48.0),
    )
    out = _outpath(args, _opt(args, section, "out", "corpus"))
    samples = synth_corpus(cfg, out)
    if not samples:
        raise DataError("synthesis produced no samples")
    split = make_split(samples, train_frac=_opt(args, section, "train-frac", 0.8), seed=seed)
    split.save(out / "split.json")
    print(f"wrote {len(samples)} samples across "
          f"{len({s.scene_id for s in samples})} scenes to {out}")
    return 0


def cmd_preprocess(args) -> int:
    from bevground.data.preprocess import preprocess
    from bevground.data.schema import write_samples

    section = _load_config_section(args)
    raw_path = Path(args.raw)
    if not raw_path.exists():
        raise DataError(f"raw annotations not found: {raw_path}")
    records = []
    with open(raw_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    samples, rejections = preprocess(
        records,
        range_lo=tuple(_opt(args, section, "range-lo", (-54.0, -54.0, -5.0))),
        range_hi=tuple(_opt(args, section, "range-hi", (54.0, 54.0, 3.0))),
        min_points=_opt(args, section, "min-points", 1),
        points_root=_opt(args, section, "points-root", None),
    )
    out = _outpath(args, _opt(args, section, "out", "samples.jsonl"))
    write_samples(out, samples)
    for r in rejections:
        log.info("rejected %s: %s", r.sample_id, r.reason)
    print(f"kept {len(samples)} of {len(records)} records ({len(rejections)} rejected) -> {out}")
    return 0


def cmd_annotate(args) -> int:
    from bevground.annotate import (
        AnnotationJob, HTTPClient, MockCaptioner, MockParaphraser, run_pipeline,
    )
    from bevground.cameras import CameraRig
    from bevground.data.schema import read_samples

    section = _load_config_section(args)
    root = Path(args.corpus)
    frames = read_samples(root / "samples.jsonl")
    rig_path = root / "calib.json"
    rig = CameraRig.load(rig_path) if rig_path.exists() else None

    timeout = _opt(args, section, "timeout", 30.0)
    retries = _opt(args, section, "max-retries", 2)
    cap_ep = _opt(args, section, "captioner-endpoint",
                  os.environ.get("BEVGROUND_CAPTIONER_ENDPOINT"))
    par_ep = _opt(args, section, "paraphraser-endpoint",
                  os.environ.get("BEVGROUND_PARAPHRASER_ENDPOINT"))
    captioner = (HTTPClient(endpoint=cap_ep, timeout=timeout, max_retries=retries, kind="captioner")
                 if cap_ep else MockCaptioner(max_retries=retries))
    paraphraser = (HTTPClient(endpoint=par_ep, timeout=timeout, max_retries=retries, kind="paraphraser")
                   if par_ep else MockParaphraser(max_retries=retries))

    job = AnnotationJob(
        frames=frames,
        sampling_rate=_opt(args, section, "rate", 0.2),
        seed=_opt(args, section, "seed", 0),
        concurrency=_opt(args, section, "concurrency", 1),
    )
    out = _outpath(args, _opt(args, section, "out", "annotated"))
    summary = run_pipeline(job, captioner, paraphraser, out, corpus_root=root, rig=rig)
    print(json.dumps(summary))
    attempted = summary["sampled"] - summary["filtered"]
    if attempted > 0 and summary["failed"] == attempted:
        log.error("every annotation request failed; remote client exhausted")
        return 3
    return 0


def cmd_train_baseline(args) -> int:
    import torch

    from bevground.baseline import (
        FEATURE_DIM, MatchHead, MatcherTrainConfig, read_proposals, synthetic_detections,
    )
    from bevground.baseline_io import save_match_head
    from bevground.text import EncoderSpec, build_encoder

    section = _load_config_section(args)
    seed = _opt(args, section, "seed", 0)
    root, samples = _load_corpus(args.corpus, None, args.split)
    if not samples:
        raise DataError("no training samples in the selected split")

    if args.proposals:
        frames = read_proposals(args.proposals)
    else:
        det_seed = _opt(args, section, "detector-seed", seed)
        frames = [synthetic_detections(s, seed=det_seed) for s in samples]

    spec = EncoderSpec(name="hash-test", dim=_opt(args, section, "text-dim", 32), seed=seed)
    encoder = build_encoder(spec)
    embeddings = {s.sample_id: encoder.encode(s.prompt) for s in samples}

    d_obj = frames[0].proposals[0].feature.shape[0] if frames and frames[0].proposals else FEATURE_DIM
    torch.manual_seed(seed)
    head = MatchHead(spec.dim, d_obj)
    cfg = MatcherTrainConfig(
        epochs=_opt(args, section, "epochs", 20),
        batch_size=_opt(args, section, "batch", 4),
        lr=_opt(args, section, "lr", 0.01),
        seed=seed,
    )
    from bevground.baseline import train_matcher

    result = train_matcher(samples, frames, embeddings, head, cfg)
    out = _outpath(args, _opt(args, section, "out", "match_head.npz"))
    save_match_head(out, head, spec, d_obj)
    print(f"trained on {result['used']} frames (skipped {result['skipped']}), "
          f"final loss {result['loss_curve'][-1]:.4f} -> {out}")
    return 0


def cmd_train_bevgrounding(args) -> int:
    from bevground.model.grids import GridSpec
    from bevground.model.network import ModelConfig
    from bevground.model.train import TrainConfig, train

    section = _load_config_section(args)
    seed = _opt(args, section, "seed", 0)
    root, samples = _load_corpus(args.corpus, None, args.split)
    if not samples:
        raise DataError("no training samples in the selected split")

    lidar_only = bool(args.lidar_only or section.get("lidar-only", False))
    grid = GridSpec(
        lo=_opt(args, section, "grid-lo", -54.0),
        hi=_opt(args, section, "grid-hi", 54.0),
        cell=_opt(args, section, "cell", 0.6),
    )
    model_cfg = ModelConfig(
        grid=grid,
        channels=_opt(args, section, "channels", 64),
        d_model=_opt(args, section, "channels", 64),
        k_proposals=_opt(args, section, "proposals-k", 200),
        use_images=not lidar_only,
        text_seed=seed,
    )
    steps2 = 0 if lidar_only else _opt(args, section, "steps2", 0)
    train_cfg = TrainConfig(
        seed=seed,
        steps_stage1=_opt(args, section, "steps", 2000),
        steps_stage2=steps2,
        batch_size=_opt(args, section, "batch", 2),
        lr_stage1=_opt(args, section, "lr", 1e-3),
        lr_stage2=_opt(args, section, "lr2", 1e-4),
    )
    out = _outpath(args, _opt(args, section, "out", "bevgrounding.npz"))
    _, history = train(samples, root, model_cfg, train_cfg,
                       checkpoint_path=out, resume_from=args.resume,
                       warm_start=args.warm_start)
    if not history:
        raise DataError("no training steps ran; check --steps against the resume point")
    print(f"trained {len(history)} steps, final loss {history[-1]['total']:.4f} -> {out}")
    return 0


def cmd_predict(args) -> int:
    from bevground.baseline import (
        read_proposals, reference_select, select_match, synthetic_detections,
    )
    from bevground.text import build_encoder

    section = _load_config_section(args)
    seed = _opt(args, section, "seed", 0)
    root, samples = _load_corpus(args.corpus, None, args.split)
    if not samples:
        raise DataError("no samples in the selected split")
    out = _outpath(args, _opt(args, section, "out", "predictions.jsonl"))

    def proposal_frames():
        if args.proposals:
            by_id = {f.frame_id: f for f in read_proposals(args.proposals)}
            missing = [s.sample_id for s in samples if s.sample_id not in by_id]
            if missing:
                raise DataError(f"proposal file lacks {len(missing)} frame(s), e.g. {missing[:3]}")
            return [by_id[s.sample_id] for s in samples]
        det_seed = _opt(args, section, "detector-seed", seed)
        return [synthetic_detections(s, seed=det_seed) for s in samples]

    rows = []
    if args.method == "bevgrounding":
        from bevground.model.train import load_checkpoint, predict_corpus

        if not args.checkpoint:
            raise DataError("--checkpoint is required for method bevgrounding")
        model, model_cfg, _, _, _ = load_checkpoint(args.checkpoint)
        rows = predict_corpus(model, samples, root, use_images=model_cfg.use_images)
    elif args.method == "baseline":
        from bevground.baseline_io import load_match_head

        if not args.head:
            raise DataError("--head is required for method baseline")
        head, enc_spec, _ = load_match_head(args.head)
        encoder = build_encoder(enc_spec)
        for sample, frame in zip(samples, proposal_frames()):
            if not frame.proposals:
                raise DataError(f"frame {frame.frame_id} has no proposals")
            emb = encoder.encode(sample.prompt)
            idx = select_match(frame.proposals, emb, head)
            p = frame.proposals[idx]
            rows.append({"sample_id": sample.sample_id, "box": p.box.to_list(),
                         "confidence": float(p.score)})
    else:
        rng = np.random.default_rng([seed, 101])
        frames = proposal_frames() if args.method in ("pred-rand", "pred-best") else [None] * len(samples)
        for sample, frame in zip(samples, frames):
            box = reference_select(
                args.method, sample=sample,
                proposals=frame.proposals if frame is not None else None, rng=rng,
            )
            rows.append({"sample_id": sample.sample_id, "box": box.to_list(), "confidence": 1.0})

    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(rows)} predictions -> {out}")
    return 0


def cmd_eval(args) -> int:
    from bevground.data.schema import read_samples
    from bevground.evalkit import format_table, mean_report, records_from_files, report

    section = _load_config_section(args)
    gt_path = Path(args.gt)
    if not gt_path.exists():
        raise DataError(f"ground truth not found: {gt_path}")
    samples = read_samples(gt_path)
    thresholds = tuple(_opt(args, section, "thresholds", (0.25, 0.5)))

    tables = []
    for pred in args.pred:
        if not Path(pred).exists():
            raise DataError(f"prediction file not found: {pred}")
        records = records_from_files(pred, samples)
        tables.append(report(records, thresholds))
    table = tables[0] if len(tables) == 1 else mean_report(tables)
    if args.iou != "both":
        table = dict(table)
        table["accuracy"] = {args.iou: table["accuracy"][args.iou]}
    print(format_table(table))
    if args.out:
        _outpath(args, args.out).write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_stats(args) -> int:
    from bevground.data.schema import read_samples
    from bevground.data.stats import corpus_stats

    gt_path = Path(args.gt)
    if not gt_path.exists():
        raise DataError(f"ground truth not found: {gt_path}")
    samples = read_samples(gt_path)
    if not samples:
        raise DataError("empty corpus")
    stats = corpus_stats(samples)
    text = json.dumps(stats, indent=2)
    print(text)
    if args.out:
        _outpath(args, args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_viz(args) -> int:
    from bevground.data.schema import load_points, read_samples
    from bevground.evalkit import read_predictions
    from bevground.viz import plot_scene

    root = Path(args.corpus)
    samples = read_samples(root / "samples.jsonl")
    match = [s for s in samples if s.sample_id == args.sample]
    if not match:
        raise DataError(f"sample {args.sample!r} not found in {root}")
    sample = match[0]
    points = load_points(root / sample.lidar_ref)
    predictions = []
    for spec_str in args.pred:
        name, _, path = spec_str.partition("=")
        if not path:
            name, path = Path(spec_str).stem, spec_str
        preds = read_predictions(path)
        if sample.sample_id in preds:
            predictions.append((name, preds[sample.sample_id][0]))
    out = _outpath(args, args.out or "scene.png")
    plot_scene(points, sample.referred, predictions, out, title=sample.prompt)
    print(f"wrote {out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "annotate": cmd_annotate,
    "train-baseline": cmd_train_baseline,
    "train-bevgrounding": cmd_train_bevgrounding,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "viz": cmd_viz,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError:
        return 1
    except (DataError, FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
