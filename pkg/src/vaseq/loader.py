"""Sequence loading pipeline: parse -> scale -> repeat -> window -> filter ->
buffered shuffle -> batch.

Records stream out of containers in path order.  In training mode the stream
repeats forever and windows pass through a seeded shuffle buffer of
10 * batch_size * seq_length; evaluation repeats ``epochs`` times in record
order with no shuffling.  Windows are non-overlapping groups of seq_length
consecutive records; a window survives only if its first and last record
share a video name and their frame numbers are at most 15 * seq_length
apart.  Training drops a final partial batch, evaluation emits it.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .records import FrameRecord, RecordError, iter_container


class EmptyDatasetError(RuntimeError):
    pass


@dataclass
class LoaderConfig:
    seq_length: int
    batch_size: int
    epochs: int = 1
    training: bool = False
    seed: int = 0
    buffer_size: int = field(init=False)
    threshold: int = field(init=False)

    def __post_init__(self):
        if self.seq_length < 1 or self.batch_size < 1:
            raise ValueError("seq_length and batch_size must be >= 1")
        self.buffer_size = 10 * self.batch_size * self.seq_length
        self.threshold = 15 * self.seq_length


@dataclass
class SequenceBatch:
    ids: list            # B rows of L frame ids
    images: np.ndarray   # B x L x 96 x 96 x 3 float32 in [-1, 1]
    labels: np.ndarray   # B x L x 2 float32 in [-1, 1]


def scale_image(image: np.ndarray) -> np.ndarray:
    """Pixel p -> (p - 128) / 128, exactly representable and invertible."""
    return (image.astype(np.float32) - np.float32(128.0)) / np.float32(128.0)


def unscale_image(scaled: np.ndarray) -> np.ndarray:
    return (scaled * np.float32(128.0) + np.float32(128.0)).astype(np.uint8)


def scale_label(value: int) -> float:
    return value / 1000.0


def parse_and_scale(record: FrameRecord):
    """(frame id, image floats in [-1,1], [valence, arousal] in [-1,1])."""
    record.validate()
    labels = np.array([scale_label(record.valence), scale_label(record.arousal)],
                      dtype=np.float32)
    return record.frame_id, scale_image(record.image), labels


def split_frame_id(frame_id: str):
    parts = frame_id.split("/")
    if len(parts) != 2:
        raise RecordError(f"unparseable frame id {frame_id!r}")
    video, number = parts
    if not number.isdigit():
        raise RecordError(f"unparseable frame number in {frame_id!r}")
    return video, int(number)


def check_consecutive(ids, threshold):
    """Endpoint rule: first and last share the video name and the frame-number
    distance stays within the threshold.  Only the endpoints are inspected."""
    first_video, first_no = split_frame_id(ids[0])
    last_video, last_no = split_frame_id(ids[-1])
    if first_video != last_video:
        return False
    return (last_no - first_no) <= threshold


def container_paths(paths):
    resolved = []
    for p in paths if isinstance(paths, (list, tuple)) else [paths]:
        p = Path(p)
        if p.is_dir():
            resolved.extend(sorted(p.glob("*.vasq")))
        else:
            resolved.append(p)
    return resolved


def _parsed_stream(paths):
    for path in paths:
        for record in iter_container(path):
            yield parse_and_scale(record)


def _windows(stream, seq_length):
    window = []
    for item in stream:
        window.append(item)
        if len(window) == seq_length:
            yield window
            window = []
    # a final partial window cannot fill a sequence and is dropped


def _shuffled(windows, buffer_size, seed):
    rng = random.Random(seed)
    buffer = []
    for window in windows:
        buffer.append(window)
        if len(buffer) >= buffer_size:
            idx = rng.randrange(len(buffer))
            buffer[idx], buffer[-1] = buffer[-1], buffer[idx]
            yield buffer.pop()
    rng.shuffle(buffer)
    yield from buffer


def load(paths, config: LoaderConfig):
    """Iterator of SequenceBatch over the container files at ``paths``.

    Raises EmptyDatasetError if no container yields a single valid window.
    """
    files = container_paths(paths)
    if not files:
        raise EmptyDatasetError(f"no containers found at {paths}")
    epoch_records = [None]

    def record_stream():
        # repeat precedes windowing, so training windows cross epoch seams
        passes = itertools.count() if config.training else range(config.epochs)
        for i in passes:
            count = 0
            for item in _parsed_stream(files):
                count += 1
                yield item
            if i == 0:
                if count == 0:
                    raise EmptyDatasetError("containers hold no records")
                epoch_records[0] = count

    def filtered():
        barren = 0
        for window in _windows(record_stream(), config.seq_length):
            ids = [item[0] for item in window]
            if check_consecutive(ids, config.threshold):
                barren = 0
                yield window
                continue
            barren += 1
            if config.training and epoch_records[0] is not None:
                # all window alignments repeat within L+1 epochs of records
                total = epoch_records[0]
                if barren > (total * (config.seq_length + 1)) // config.seq_length + config.seq_length:
                    raise EmptyDatasetError("no valid windows in dataset")

    windows = filtered()
    if config.training:
        windows = _shuffled(windows, config.buffer_size, config.seed)

    def batches():
        emitted = False
        batch = []
        for window in windows:
            batch.append(window)
            if len(batch) == config.batch_size:
                emitted = True
                yield _assemble(batch)
                batch = []
        if batch and not config.training:
            emitted = True
            yield _assemble(batch)
        if not emitted:
            raise EmptyDatasetError("no valid windows in dataset")

    return batches()


def _assemble(batch):
    ids = [[item[0] for item in window] for window in batch]
    images = np.stack([np.stack([item[1] for item in window]) for window in batch])
    labels = np.stack([np.stack([item[2] for item in window]) for window in batch])
    return SequenceBatch(ids=ids, images=images, labels=labels)
