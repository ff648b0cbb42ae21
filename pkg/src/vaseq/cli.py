"""Command-line entry point: every workflow as a subcommand."""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import corpus, loader, records, synth, training
from .corpus import AnnotationTrack, VideoMeta
from .model import ModelConfig
from .optim import Adam
from .training import StrategyCase


def fail(message):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def wrap_errors(fn):
    @functools.wraps(fn)
    def inner(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (OSError, ValueError, RuntimeError, KeyError) as exc:
            fail(exc)

    return inner


@click.group()
@click.option("--seed", default=0, show_default=True, help="Global random seed.")
@click.option("--out-dir", default=".", show_default=True,
              type=click.Path(file_okay=False),
              help="Base directory for outputs that give only file names.")
@click.pass_context
def main(ctx, seed, out_dir):
    """Valence/arousal sequence toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["out_dir"] = Path(out_dir)


def model_options(fn):
    options = [
        click.option("--backbone", type=click.Choice(["vgg", "resnet", "dense"]),
                     default="vgg", show_default=True),
        click.option("--width", default=2, show_default=True,
                     help="Base filter count of the backbone."),
        click.option("--cell", type=click.Choice(["gru", "lstm", "indrnn"]),
                     default="gru", show_default=True),
        click.option("--hidden", default=128, show_default=True),
        click.option("--rnn-layers", default=2, show_default=True),
        click.option("--attention", type=click.Choice(["on", "off"]),
                     default="on", show_default=True),
        click.option("--attention-window", default=30, show_default=True),
        click.option("--peepholes/--no-peepholes", default=True, show_default=True),
        click.option("--seq-len", default=16, show_default=True),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def build_config(seed, backbone, width, cell, hidden, rnn_layers, attention,
                 attention_window, peepholes, seq_len):
    return ModelConfig(backbone=backbone, width=width, cell=cell, hidden=hidden,
                       rnn_layers=rnn_layers, attention=(attention == "on"),
                       attention_window=attention_window, peepholes=peepholes,
                       seq_len=seq_len, seed=seed)


def load_config(path):
    fields = json.loads(Path(path).read_text())
    return ModelConfig(**fields)


@main.command("match")
@click.option("--annotations", required=True, type=click.Path(exists=True),
              help="Directory holding valence.txt and arousal.txt tracks.")
@click.option("--frames-count", required=True, type=int)
@click.option("--out", required=True, type=click.Path())
@wrap_errors
def cli_match(annotations, frames_count, out):
    """Nearest-neighbor match annotator tracks to frames; write merged rows."""
    annotations = Path(annotations)
    per_dim = {}
    for dim in ("valence", "arousal"):
        track = AnnotationTrack.parse(annotations / f"{dim}.txt", dim)
        per_dim[dim] = corpus.match_track(track, frames_count)
    rows = corpus.merge(per_dim["valence"], per_dim["arousal"])
    corpus.write_merged(rows, out)
    click.echo(f"wrote {len(rows)} rows to {out}")


@main.command("filter")
@click.option("--candidates-dir", required=True, type=click.Path(exists=True))
@click.option("--reference", required=True, type=click.Path(exists=True))
@click.option("--bins", default=256, show_default=True)
@click.option("--out", required=True, type=click.Path())
@wrap_errors
def cli_filter(candidates_dir, reference, bins, out):
    """Pick the detected object most similar to the reference face."""
    from PIL import Image

    def load(path):
        return np.asarray(Image.open(path).convert("RGB"))

    candidates_dir = Path(candidates_dir)
    ref = load(reference)
    manifest = {}
    frame_dirs = sorted(d for d in candidates_dir.iterdir() if d.is_dir())
    groups = frame_dirs or [candidates_dir]
    for group in groups:
        files = sorted(p for p in group.iterdir()
                       if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not files:
            continue
        idx = corpus.pick_face([load(p) for p in files], ref, bins=bins)
        manifest[group.name] = {"index": idx, "file": files[idx].name}
    Path(out).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    click.echo(f"picked faces for {len(manifest)} frame groups -> {out}")


@main.command("partition")
@click.option("--meta", required=True, type=click.Path(exists=True),
              help="JSON list of {id, frames, fps, gender, subject, category}.")
@click.option("--out", required=True, type=click.Path())
@click.pass_context
@wrap_errors
def cli_partition(ctx, meta, out):
    """Assign train/validate/test splits under the balance constraints."""
    rows = json.loads(Path(meta).read_text())
    videos = []
    for row in rows:
        cat = corpus.Category(row["category"]) if "category" in row else None
        videos.append(VideoMeta(row["id"], row["frames"], row.get("fps", 30),
                                row.get("gender", "f"), row.get("subject", row["id"]),
                                category=cat))
    assignment = corpus.partition(videos, seed=ctx.obj["seed"])
    with open(out, "w") as fh:
        fh.write("video,split\n")
        for video in sorted(assignment):
            fh.write(f"{video},{assignment[video]}\n")
    sizes = {s: list(assignment.values()).count(s) for s in corpus.SPLITS}
    click.echo(f"split sizes: {sizes}")


@main.command("pack")
@click.option("--merged", required=True, type=click.Path(exists=True))
@click.option("--frames-dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--video", default=None, help="Video name; defaults to the merged file stem.")
@wrap_errors
def cli_pack(merged, frames_dir, out, video):
    """Pack frames plus merged annotations into a record container."""
    path = records.write_records(merged, frames_dir, out, video_name=video)
    count = len(records.read_container(path))
    click.echo(f"packed {count} records into {path}")


@main.command("synth")
@click.option("--videos", default=8, show_default=True)
@click.option("--frames", default=300, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
@wrap_errors
def cli_synth(ctx, videos, frames, out):
    """Generate the synthetic corpus (brightness->valence, motion->arousal)."""
    meta = synth.generate(out, videos=videos, frames=frames, seed=ctx.obj["seed"])
    click.echo(f"generated {len(meta)} videos x {frames} frames in {out}")


@main.command("pretrain")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--steps", default=150, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--batch", default=16, show_default=True)
@click.option("--out", required=True, type=click.Path())
@model_options
@click.pass_context
@wrap_errors
def cli_pretrain(ctx, records_path, steps, lr, batch, out, **model_flags):
    """Self-pretrain the backbone on brightness-bucket classification."""
    cfg = build_config(ctx.obj["seed"], **model_flags)
    path = training.pretrain_backbone(records_path, cfg, out, steps=steps,
                                      lr=lr, batch_size=batch, seed=ctx.obj["seed"])
    click.echo(f"pretrained backbone saved to {path}")


@main.command("train")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--case", type=click.IntRange(0, 3), default=2, show_default=True)
@click.option("--batch", default=2, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--steps", default=2000, show_default=True)
@click.option("--ckpt-every", default=50, show_default=True)
@click.option("--log-every", default=10, show_default=True)
@click.option("--init-rnn", type=click.Path(exists=True), default=None,
              help="Checkpoint whose RNN block seeds this run (case 3).")
@click.option("--init-cnn", type=click.Path(exists=True), default=None,
              help="Backbone checkpoint (from pretrain) to start from.")
@click.option("--ckpt-dir", type=click.Path(), default=None,
              help="Checkpoint directory; defaults to <out-dir>/ckpt.")
@model_options
@click.pass_context
@wrap_errors
def cli_train(ctx, records_path, case, batch, lr, steps, ckpt_every, log_every,
              init_rnn, init_cnn, ckpt_dir, **model_flags):
    """Train under one of the four strategy cases, streaming checkpoints."""
    import logging

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = build_config(ctx.obj["seed"], **model_flags)
    strategy = StrategyCase(case=case, init_rnn=init_rnn, init_cnn=init_cnn)
    model = training.build_model(cfg, strategy)
    data = loader.load(records_path, loader.LoaderConfig(
        seq_length=cfg.seq_len, batch_size=batch, training=True,
        seed=ctx.obj["seed"]))
    out_dir = Path(ckpt_dir) if ckpt_dir else ctx.obj["out_dir"] / "ckpt"
    optimizer = Adam(lr=lr)
    last = None
    for step, path in training.train_loop(model, data, optimizer, out_dir,
                                          steps, ckpt_every=ckpt_every,
                                          log_every=log_every):
        last = path
    click.echo(f"trained {steps} steps (case {case}); checkpoints in {out_dir}")
    if last:
        click.echo(f"latest: {last}")


@main.command("eval")
@click.option("--ckpt-dir", required=True, type=click.Path(exists=True))
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None,
              help="Report CSV; defaults to <ckpt-dir>/eval.csv.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Model config JSON; defaults to <ckpt-dir>/config.json.")
@click.option("--poll", default=1.0, show_default=True)
@click.option("--idle-limit", default=5, show_default=True,
              help="Stop after this many empty polls (watcher mode).")
@wrap_errors
def cli_eval(ckpt_dir, records_path, out, config_path, poll, idle_limit):
    """Watch a checkpoint directory and score each checkpoint on a split."""
    ckpt_dir = Path(ckpt_dir)
    cfg = load_config(config_path or ckpt_dir / "config.json")
    out = Path(out) if out else ckpt_dir / "eval.csv"
    for report in training.eval_loop(cfg, ckpt_dir, records_path, out_csv=out,
                                     poll_interval=poll, idle_limit=idle_limit):
        click.echo(report.row())
    click.echo(f"reports in {out}")


@main.command("test")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Model config JSON; defaults to config.json beside the checkpoint.")
@click.option("--predictions-dir", type=click.Path(), default=None,
              help="Also dump per-video predicted traces for the review UI.")
@wrap_errors
def cli_test(ckpt, records_path, out, config_path, predictions_dir):
    """Score one chosen checkpoint on the test split."""
    ckpt = Path(ckpt)
    cfg = load_config(config_path or ckpt.parent / "config.json")
    report, model = training.evaluate_checkpoint(cfg, ckpt, records_path,
                                                 split="test")
    click.echo(training.REPORT_HEADER)
    click.echo(report.row())
    if out:
        with open(out, "w") as fh:
            fh.write(training.REPORT_HEADER + "\n")
            fh.write(report.row() + "\n")
    if predictions_dir:
        _dump_predictions(model, records_path, Path(predictions_dir))


def _dump_predictions(model, records_path, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = loader.LoaderConfig(seq_length=model.config.seq_len, batch_size=1,
                              epochs=1, training=False)
    writers = {}
    try:
        for batch in loader.load(records_path, cfg):
            preds = model.predict(batch.images)
            for row_ids, row_pred in zip(batch.ids, preds):
                for frame_id, (v, a) in zip(row_ids, row_pred):
                    video, k = frame_id.split("/")
                    if video not in writers:
                        writers[video] = open(out_dir / f"{video}.csv", "w")
                        writers[video].write("k,valence,arousal\n")
                    writers[video].write(f"{k},{v:.6f},{a:.6f}\n")
    finally:
        for fh in writers.values():
            fh.close()


@main.command("stats")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--bins", default=40, show_default=True)
@click.pass_context
@wrap_errors
def cli_stats(ctx, records_path, out, bins):
    """Export label distribution histograms and a scatter sample as CSV."""
    valence, arousal = [], []
    for path in loader.container_paths(records_path):
        for record in records.iter_container(path):
            valence.append(record.valence)
            arousal.append(record.arousal)
    paths = corpus.write_stats(np.array(valence), np.array(arousal), out,
                               bins=bins, seed=ctx.obj["seed"])
    click.echo(f"wrote {len(paths)} files to {out}")


@main.command("serve")
@click.option("--corpus-dir", required=True, type=click.Path(exists=True))
@click.option("--port", default=8650, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--ui-dir", type=click.Path(exists=True), default=None,
              help="Built frontend to serve at /.")
@wrap_errors
def cli_serve(corpus_dir, port, host, ui_dir):
    """Serve the annotation/review API (and optionally the UI) over HTTP."""
    from . import server

    click.echo(f"serving {corpus_dir} on http://{host}:{port}")
    server.run(corpus_dir, port, host=host, ui_dir=ui_dir)


if __name__ == "__main__":
    main()
