"""Training, watcher-style evaluation, and testing around the regressor.

The train loop owns the checkpoint directory: it steps the optimizer on the
1-CCC loss, clips IndRNN recurrent weights, and saves a checkpoint every
``ckpt_every`` steps (atomic rename, so the concurrently running eval loop
never sees a partial file).  The eval loop polls that directory, scores each
new checkpoint over the whole validation split in record order with
streaming moments, and appends report rows in step order.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import loader, metrics, records
from .model import ModelConfig, Regressor, trainable_scope_for_case
from .optim import Adam

log = logging.getLogger(__name__)

REPORT_HEADER = "step,ccc_valence,ccc_arousal,mse_valence,mse_arousal,split"


class StrategyError(ValueError):
    pass


@dataclass
class StrategyCase:
    """Cases 0-3: what the optimizer may touch and where the RNN starts.

    0: frozen CNN, random RNN; 1: last conv stage + RNN + FC; 2: everything
    trainable, random RNN; 3: everything trainable, RNN block initialized
    from a previous run's best checkpoint.
    """

    case: int
    init_rnn: str | None = None
    init_cnn: str | None = None

    def __post_init__(self):
        if self.case not in (0, 1, 2, 3):
            raise StrategyError(f"unknown case {self.case}")
        if self.case == 3 and not self.init_rnn:
            raise StrategyError("case 3 requires an RNN init checkpoint")


def build_model(config: ModelConfig, strategy: StrategyCase) -> Regressor:
    config = replace(config, backbone_trainable=trainable_scope_for_case(strategy.case))
    model = Regressor(config)
    trainable = model.trainable_names()
    for name, node in model.params.items():
        # frozen leaves drop out of the backward pass entirely
        node.needs_grad = name in trainable
    if strategy.init_cnn:
        _, tensors, _ = ckpt.load(strategy.init_cnn)
        buffer_names = set(model.named_buffers())
        model.load_state({k: v for k, v in tensors.items() if k not in buffer_names},
                         buffers={k: v for k, v in tensors.items() if k in buffer_names},
                         prefix="cnn/")
    if strategy.init_rnn:
        _, tensors, _ = ckpt.load(strategy.init_rnn)
        model.load_state({k: v for k, v in tensors.items() if k.startswith("rnn/")},
                         prefix="rnn/")
    return model


def _checkpoint_tensors(model: Regressor):
    tensors = {name: node.value for name, node in model.params.items()}
    tensors.update(model.named_buffers())
    return tensors


def save_checkpoint(model: Regressor, optimizer: Adam, out_dir, step):
    state = optimizer.state_tensors()
    state["meta/fingerprint"] = ckpt.fingerprint_tensor(model.config.fingerprint())
    return ckpt.save(out_dir / ckpt.checkpoint_name(step), step,
                     _checkpoint_tensors(model), state)


def train_loop(model: Regressor, data_iter, optimizer: Adam, out_dir,
               steps, ckpt_every=50, log_every=10, loss_hook=None):
    """Generator yielding (step, checkpoint path) after every save.

    Saving happens every ``ckpt_every`` steps and at the final step.  The
    caller drives the loop, so evaluation between yields (or in a separate
    process watching ``out_dir``) both work.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_path = out_dir / "config.json"
    if not config_path.exists():
        config_path.write_text(json.dumps(model.config.__dict__, indent=2,
                                          sort_keys=True))
    trainable = model.trainable_names()
    clips = model.recurrent_clips()
    for step in range(1, steps + 1):
        batch = next(data_iter)
        preds = model.forward(batch.images, training=True)
        loss = metrics.ccc_loss(preds, ad.constant(batch.labels.astype(model.dtype)))
        ad.backward(loss)
        optimizer.step(model.params, trainable=trainable, clips=clips)
        if loss_hook is not None:
            loss_hook(step, float(loss.value.item()))
        if log_every and step % log_every == 0:
            log.info("step %d loss %.4f", step, float(loss.value.item()))
        if step % ckpt_every == 0 or step == steps:
            path = save_checkpoint(model, optimizer, out_dir, step)
            yield step, path


@dataclass
class EvalReport:
    step: int
    ccc_valence: float
    ccc_arousal: float
    mse_valence: float
    mse_arousal: float
    split: str = "validate"

    def row(self):
        return (f"{self.step},{self.ccc_valence:.6f},{self.ccc_arousal:.6f},"
                f"{self.mse_valence:.6f},{self.mse_arousal:.6f},{self.split}")


def evaluate_model(model: Regressor, records_path, split="validate", step=0,
                   batch_size=1) -> EvalReport:
    """CCC and MSE per dimension over the whole split, streamed in order."""
    cfg = loader.LoaderConfig(seq_length=model.config.seq_len,
                              batch_size=batch_size, epochs=1, training=False)
    acc = [metrics.MomentAccumulator(), metrics.MomentAccumulator()]
    for batch in loader.load(records_path, cfg):
        preds = model.predict(batch.images)
        for dim in range(2):
            acc[dim].add(preds[:, :, dim].ravel(), batch.labels[:, :, dim].ravel())
    return EvalReport(step=step,
                      ccc_valence=acc[0].ccc(), ccc_arousal=acc[1].ccc(),
                      mse_valence=acc[0].mse(), mse_arousal=acc[1].mse(),
                      split=split)


def evaluate_checkpoint(config: ModelConfig, ckpt_path, records_path,
                        split="validate", model=None, check_fingerprint=True):
    step, params, state = ckpt.load(ckpt_path)
    if check_fingerprint and "meta/fingerprint" in state:
        stored = ckpt.fingerprint_from_tensor(state["meta/fingerprint"])
        if stored != config.fingerprint():
            raise ckpt.CheckpointError(
                f"{ckpt_path}: config fingerprint mismatch (checkpoint "
                f"{stored:#010x}, model {config.fingerprint():#010x})")
    if model is None:
        model = Regressor(config)
    buffer_names = set(model.named_buffers())
    expected = set(model.params) | buffer_names
    missing = expected - set(params)
    if missing:
        raise ckpt.CheckpointError(
            f"{ckpt_path}: missing parameters {sorted(missing)[:3]}"
            f"{'...' if len(missing) > 3 else ''}")
    model.load_state({k: v for k, v in params.items() if k not in buffer_names},
                     buffers={k: v for k, v in params.items() if k in buffer_names})
    return evaluate_model(model, records_path, split=split, step=step), model


def eval_loop(config: ModelConfig, ckpt_dir, records_path, out_csv=None,
              poll_interval=0.5, idle_limit=None, stop_step=None,
              split="validate"):
    """Watch ``ckpt_dir`` and yield an EvalReport for each new checkpoint.

    Reports come out in step order; a checkpoint appearing with a step lower
    than one already reported is skipped with a warning, and unreadable or
    corrupt files are skipped without killing the watcher.  The loop ends
    after ``idle_limit`` empty polls or once ``stop_step`` is reached.
    """
    from pathlib import Path

    ckpt_dir = Path(ckpt_dir)
    writer = None
    if out_csv is not None:
        out_csv = Path(out_csv)
        fresh = not out_csv.exists()
        writer = open(out_csv, "a")
        if fresh:
            writer.write(REPORT_HEADER + "\n")
    model = None
    done = set()
    last_step = -1
    idle = 0
    try:
        while True:
            pending = [(s, p) for s, p in ckpt.list_checkpoints(ckpt_dir)
                       if p.name not in done]
            if not pending:
                idle += 1
                if idle_limit is not None and idle >= idle_limit:
                    return
                time.sleep(poll_interval)
                continue
            idle = 0
            for step, path in pending:
                done.add(path.name)
                if step <= last_step:
                    log.warning("checkpoint %s arrived late (already reported "
                                "step %d); skipping", path.name, last_step)
                    continue
                try:
                    report, model = evaluate_checkpoint(
                        config, path, records_path, split=split, model=model)
                except (ckpt.CheckpointError, OSError) as exc:
                    log.warning("skipping unreadable checkpoint %s: %s", path, exc)
                    continue
                last_step = step
                if writer is not None:
                    writer.write(report.row() + "\n")
                    writer.flush()
                yield report
                if stop_step is not None and step >= stop_step:
                    return
    finally:
        if writer is not None:
            writer.close()


def select_best(reports, dimension):
    """Checkpoint step with the highest CCC for one dimension; ties go to the
    earliest step."""
    key = {"valence": "ccc_valence", "arousal": "ccc_arousal"}[dimension]
    best = None
    for report in reports:
        value = getattr(report, key)
        if best is None or value > getattr(best, key):
            best = report
    if best is None:
        raise ValueError("no reports")
    return best.step


def run_test(config: ModelConfig, ckpt_path, records_path):
    """Score the chosen checkpoint on the test split: one report row."""
    report, _ = evaluate_checkpoint(config, ckpt_path, records_path, split="test")
    return report


def parse_report_csv(path):
    out = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != REPORT_HEADER:
            raise ValueError(f"{path}: unexpected report header {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 6:
                continue
            out.append(EvalReport(int(parts[0]), float(parts[1]), float(parts[2]),
                                  float(parts[3]), float(parts[4]), parts[5]))
    return out


# ---------------------------------------------------------------------------
# Backbone self-pretraining (stands in for large-corpus pretrained weights)


def pretrain_backbone(records_path, config: ModelConfig, out_path, steps=150,
                      lr=1e-3, batch_size=32, brightness_levels=4,
                      contrast_levels=4, seed=0, progress_hook=None):
    """Train the backbone alone on a synthetic classification task drawn from
    the record containers, and save a backbone-only checkpoint usable as a
    CNN init for any strategy case.

    Classes are the product of a brightness bucket and a local-contrast
    (mean horizontal gradient) bucket, quantile-split so both axes come out
    balanced; learning them forces the early filters to carry intensity and
    texture-energy features.
    """
    from pathlib import Path

    from . import backbones, cells

    rng = np.random.default_rng(seed)
    frames = []
    brightness = []
    contrast = []
    paths = loader.container_paths(records_path)
    for path in paths:
        for record in records.iter_container(path):
            frames.append(record.image)
            plane = record.image[:, :, 0].astype(np.float32)
            brightness.append(plane.mean())
            contrast.append(np.abs(np.diff(plane, axis=1)).mean())
    frames = np.stack(frames)

    def bucketize(values, levels):
        values = np.asarray(values)
        edges = np.quantile(values, np.linspace(0, 1, levels + 1)[1:-1])
        return np.searchsorted(edges, values)

    classes = brightness_levels * contrast_levels
    buckets = (bucketize(brightness, brightness_levels) * contrast_levels +
               bucketize(contrast, contrast_levels))

    bb_rng = np.random.default_rng(config.seed)
    backbone = backbones.build_backbone(
        backbones.BackboneConfig(variant=config.backbone, width=config.width,
                                 trainable="all"), bb_rng, name="cnn")
    head = cells.FcHead(backbone.feature_len, bb_rng, outputs=classes, name="aux")
    params = {**backbone.named_params(), **head.named_params()}
    optimizer = Adam(lr=lr)
    for step in range(1, steps + 1):
        pick = rng.integers(0, len(frames), size=batch_size)
        images = loader.scale_image(frames[pick])
        labels = buckets[pick]
        x = ad.constant(images)
        logits = ad.dense(backbone.forward(x, training=True), head.w, head.b)
        row_max = ad.constant(logits.value.max(axis=1, keepdims=True))
        shifted = ad.sub(logits, row_max)
        log_probs = ad.sub(shifted, ad.log(ad.sum_(ad.exp(shifted), axis=1,
                                                   keepdims=True)))
        onehot = np.zeros((batch_size, classes), dtype=np.float32)
        onehot[np.arange(batch_size), labels] = 1.0
        loss = ad.neg(ad.mean(ad.sum_(ad.mul(ad.constant(onehot), log_probs),
                                      axis=1)))
        ad.backward(loss)
        optimizer.step(params)
        if progress_hook is not None:
            progress_hook(step, float(loss.value.item()))

    _calibrate_feature_scale(backbone, frames, rng)
    tensors = {name: node.value for name, node in backbone.named_params().items()}
    tensors.update(backbone.named_buffers())
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(out_path, steps, tensors,
              {"meta/fingerprint": ckpt.fingerprint_tensor(config.fingerprint())})
    return out_path


def _calibrate_feature_scale(backbone, frames, rng, sample=256, target=1.0):
    """Rescale the backbone's output channels to unit feature scale.

    ReLU heads are positively homogeneous, so scaling the final conv (or
    batch-norm affine) per channel reparameterizes the same pretrained
    function while leaving downstream consumers well-conditioned inputs.
    """
    pick = rng.permutation(len(frames))[:sample]
    images = loader.scale_image(frames[pick])
    feats = backbone.forward(ad.constant(images), training=False).value
    channel = np.array([backbone.feature_channel(j)
                        for j in range(feats.shape[1])])
    alpha = np.ones(backbone.output_channels, dtype=np.float64)
    for c in range(backbone.output_channels):
        std = feats[:, channel == c].std()
        if std > 1e-6:
            alpha[c] = np.clip(target / std, 0.05, 50.0)
    backbone.scale_output_channels(alpha)
