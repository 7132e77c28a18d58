"""Command-line surface.

Subcommands: segment | train-bpe | pretrain | finetune | predict | eval.
Every command takes ``--config PATH`` (key = value lines), ``--seed N``,
``--out DIR`` and ``--desk``; the fully resolved configuration is echoed
to ``<out>/config.resolved``. Exit codes: 0 success, 1 data or runtime
error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bpe, corpus, metrics, report
from .checkpoint import load_model
from .config import Field, echo, parse_kv_file, resolve
from .decoding import generate_caption
from .errors import ConfigError, SegcapError
from .trainer import TrainSettings, train

DESK_PRESET = {"epochs": 2, "iterations_per_epoch": 25, "batch_size": 8}


def _train_schema() -> dict[str, Field]:
    return {
        "strategy": Field(str, required=True),
        "arch": Field(str, default="E2vidD6"),
        "vocab": Field(str, required=True),
        "epochs": Field(int, default=None),
        "iterations_per_epoch": Field(int, default=3125),
        "batch_size": Field(int, default=32),
        "seed": Field(int, default=0),
        "mask_ratio": Field(float, default=0.5),
        "hide_fraction": Field(float, default=0.25),
        "lr_max": Field(float, default=1e-4),
        "warmup_steps": Field(int, default=4000),
        "dropout": Field(float, default=0.1),
        "embed_dim": Field(int, default=128),
        "heads": Field(int, default=8),
        "ffw_dim": Field(int, default=0),
        "max_text_positions": Field(int, default=241),
        "max_video_positions": Field(int, default=40),
        "video_feature_dim": Field(int, default=128),
        "cap_data": Field(str),
        "asr_data": Field(str),
        "pair_data": Field(str),
        "init_checkpoint": Field(str),
        "resume": Field(str, default="auto"),
    }


def _settings_from(resolved: dict, out_dir: Path) -> TrainSettings:
    if resolved["resume"] not in ("auto", "none"):
        raise ConfigError("resume must be 'auto' or 'none'")
    return TrainSettings(
        strategy=resolved["strategy"], arch=resolved["arch"],
        vocab_path=resolved["vocab"], out_dir=out_dir,
        epochs=resolved["epochs"],
        iterations_per_epoch=resolved["iterations_per_epoch"],
        batch_size=resolved["batch_size"], seed=resolved["seed"],
        mask_ratio=resolved["mask_ratio"], hide_fraction=resolved["hide_fraction"],
        lr_max=resolved["lr_max"], warmup_steps=resolved["warmup_steps"],
        dropout=resolved["dropout"], embed_dim=resolved["embed_dim"],
        heads=resolved["heads"], ffw_dim=resolved["ffw_dim"],
        max_text_positions=resolved["max_text_positions"],
        max_video_positions=resolved["max_video_positions"],
        video_feature_dim=resolved["video_feature_dim"],
        cap_data=resolved["cap_data"], asr_data=resolved["asr_data"],
        pair_data=resolved["pair_data"],
        init_checkpoint=resolved["init_checkpoint"], resume=resolved["resume"])


def cmd_train(args, finetune: bool) -> int:
    raw = parse_kv_file(args.config)
    overrides: dict[str, object] = {"seed": args.seed}
    if args.desk:
        overrides.update(DESK_PRESET)
    resolved = resolve(raw, _train_schema(), overrides)
    if resolved["epochs"] is None:
        resolved["epochs"] = 30 if finetune else 200
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo(resolved, out_dir)
    settings = _settings_from(resolved, out_dir)
    final = train(settings, finetune=finetune)
    print(f"finished {resolved['strategy']} after {resolved['epochs']} epochs -> {final}")
    return 0


def cmd_segment(args) -> int:
    schema = {
        "input": Field(str, required=True),
        "output": Field(str),
        "gap_threshold": Field(float, default=corpus.GAP_THRESHOLD),
        "max_words": Field(int, default=corpus.MAX_SEGMENT_WORDS),
    }
    resolved = resolve(parse_kv_file(args.config), schema)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = Path(resolved["output"]) if resolved["output"] else out_dir / "segments.jsonl"
    resolved["output"] = str(out_path)
    echo(resolved, out_dir)

    n_segs = 0
    with open(out_path, "w", encoding="utf-8") as out_fh:
        with open(resolved["input"], encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                where = f"{resolved['input']}:{lineno}"
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SegcapError(f"{where}: invalid JSON ({exc.msg})") from exc
                for fieldname in ("video_id", "tokens"):
                    if fieldname not in obj:
                        raise SegcapError(f"{where}: missing field '{fieldname}'")
                tokens = [corpus.TimedToken(w=str(t["w"]), t=float(t["t"]))
                          for t in obj["tokens"]]
                frames_path = obj.get("frames_path") or None
                feature_count = 0
                if frames_path:
                    feature_count = corpus.read_frame_features(frames_path).shape[0]
                try:
                    segments = corpus.segment_asr(tokens, resolved["gap_threshold"],
                                                  resolved["max_words"])
                except SegcapError as exc:
                    raise SegcapError(f"{where}: {exc}") from exc
                for seg in segments:
                    offset, count = (corpus.pair_frames(seg, feature_count)
                                     if frames_path else (0, 0))
                    rec = corpus.SegmentRecord(
                        video_id=str(obj["video_id"]), seg_index=seg.seg_index,
                        tokens=seg.tokens, frames_path=frames_path,
                        frame_offset=offset, frame_count=count)
                    out_fh.write(json.dumps({
                        "video_id": rec.video_id, "seg_index": rec.seg_index,
                        "tokens": [{"w": t.w, "t": t.t} for t in rec.tokens],
                        "frames_path": rec.frames_path,
                        "frame_offset": rec.frame_offset,
                        "frame_count": rec.frame_count,
                    }, sort_keys=True) + "\n")
                    n_segs += 1
    print(f"wrote {n_segs} segments -> {out_path}")
    return 0


def cmd_train_bpe(args) -> int:
    schema = {
        "inputs": Field(str, required=True),
        "size": Field(int, default=8192),
        "output": Field(str),
    }
    resolved = resolve(parse_kv_file(args.config), schema)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = Path(resolved["output"]) if resolved["output"] else out_dir / "vocab.txt"
    resolved["output"] = str(out_path)
    echo(resolved, out_dir)

    def lines():
        for path in resolved["inputs"].split(","):
            with open(path.strip(), encoding="utf-8") as fh:
                for raw in fh:
                    raw = raw.strip()
                    if not raw:
                        continue
                    obj = json.loads(raw)
                    if "tokens" in obj:
                        yield " ".join(str(t["w"]) for t in obj["tokens"])
                    if "caption" in obj:
                        yield str(obj["caption"])
                    if "text" in obj:
                        yield str(obj["text"])

    vocab = bpe.train_bpe(lines(), resolved["size"])
    vocab.save(out_path)
    print(f"trained vocabulary of {vocab.size} subwords "
          f"({len(vocab.merges)} merges) -> {out_path}")
    return 0


def cmd_predict(args) -> int:
    schema = {
        "checkpoint": Field(str, required=True),
        "segments": Field(str, required=True),
        "segments_kind": Field(str, default="asr+video"),
        "vocab": Field(str, required=True),
        "beam_width": Field(int, default=4),
        "max_len": Field(int, default=32),
        "output": Field(str),
    }
    resolved = resolve(parse_kv_file(args.config), schema)
    if resolved["segments_kind"] not in corpus.KINDS:
        raise ConfigError(f"segments_kind must be one of {corpus.KINDS}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = Path(resolved["output"]) if resolved["output"] else out_dir / "predictions.jsonl"
    resolved["output"] = str(out_path)
    echo(resolved, out_dir)

    model, _, _ = load_model(resolved["checkpoint"], dtype=np.float32)
    vocab = bpe.Vocabulary.load(resolved["vocab"])
    if vocab.size != model.config.vocab_size:
        raise SegcapError(f"vocabulary size {vocab.size} does not match "
                          f"checkpoint vocab_size {model.config.vocab_size}")
    store = corpus.FrameStore()
    warned = False
    rows = []
    for rec in corpus.load_segments(resolved["segments"], resolved["segments_kind"]):
        ids = vocab.encode(rec.asr_text())[: corpus.MAX_TEXT_SUBWORDS]
        frames = None
        if rec.frame_count > 0:
            if model.config.multimodal:
                frames = store.rows(rec)
            elif not warned:
                print("note: text-only checkpoint; video features in the input "
                      "are ignored", file=sys.stderr)
                warned = True
        out_ids = generate_caption(model, ids, frames,
                                   beam_width=resolved["beam_width"],
                                   max_len=resolved["max_len"])
        rows.append((rec.video_id, rec.seg_index, vocab.decode(out_ids)))
    n = report.write_predictions(out_path, rows)
    print(f"wrote {n} predictions -> {out_path}")
    return 0


def _match_predictions(preds, refs):
    """Pair predictions to references by (video_id, seg_index)."""
    by_key = {}
    for vid, idx, caption in preds:
        by_key[(vid, idx)] = caption
    ref_keys = {(vid, idx) for vid, idx, _ in refs}
    for key in by_key:
        if key not in ref_keys:
            raise SegcapError(f"prediction for unknown segment {key[0]}#{key[1]}")
    cands = []
    for vid, idx, _ in refs:
        if (vid, idx) not in by_key:
            raise SegcapError(f"missing prediction for segment {vid}#{idx}")
        cands.append(by_key[(vid, idx)])
    return cands


def cmd_eval(args) -> int:
    schema = {
        "predictions": Field(str),
        "references": Field(str, required=True),
        "mode": Field(str, default="standard"),
        "tags": Field(str),
    }
    resolved = resolve(parse_kv_file(args.config), schema)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo(resolved, out_dir)
    table = (corpus.TagTable.load(resolved["tags"]) if resolved["tags"]
             else corpus.TagTable.default())
    mode = resolved["mode"]

    if mode == "agreement":
        annotations = report.read_annotations(resolved["references"])
        rep = metrics.agreement_pool(annotations, tags=table)
        title = f"annotator agreement ({rep.count} pooled pairs)"
    else:
        refs = report.read_predictions(resolved["references"])
        ids = [(vid, idx) for vid, idx, _ in refs]
        ref_caps = [table.standardize(c) for _, _, c in refs]
        if mode.startswith("constant:"):
            constant = mode.split(":", 1)[1]
            rep = metrics.constant_baseline(ref_caps, constant, ids=ids, tags=table)
            title = f"constant baseline ({constant!r})"
        elif mode == "standard":
            if not resolved["predictions"]:
                raise ConfigError("standard mode needs a predictions file")
            preds = report.read_predictions(resolved["predictions"])
            cands = [table.standardize(c) for c in _match_predictions(preds, refs)]
            rep = metrics.evaluate(cands, ref_caps, ids=ids)
            title = "prediction evaluation"
        else:
            raise ConfigError(f"unknown eval mode {mode!r}")

    paths = report.write_eval_report(rep, out_dir, stem="eval", title=title)
    print(report.format_report(rep, title))
    print(f"report files: {', '.join(str(p) for p in paths.values())}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segcap")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("segment", "train-bpe", "pretrain", "finetune", "predict", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value settings file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--desk", action="store_true",
                       help="shrink epochs/iterations/batch for desk-scale runs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "segment": lambda: cmd_segment(args),
        "train-bpe": lambda: cmd_train_bpe(args),
        "pretrain": lambda: cmd_train(args, finetune=False),
        "finetune": lambda: cmd_train(args, finetune=True),
        "predict": lambda: cmd_predict(args),
        "eval": lambda: cmd_eval(args),
    }
    try:
        return handlers[args.command]()
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SegcapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
