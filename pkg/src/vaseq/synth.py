"""Synthetic desk-scale corpus: videos whose mean brightness follows the
valence track while the amplitude of a frame-to-frame alternating checker
pattern (pure motion energy) follows the arousal track.

Each video gets a record container, a merged annotation file, raw annotator
tracks at jittered timestamps, and a row in meta.json; everything is
deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .records import FrameRecord, write_container

CHECKER_BLOCKS = (6, 12, 24)  # multi-scale, so texture filters at every
                              # depth respond to the motion amplitude
BRIGHTNESS_GAIN = 55.0   # valence in [-1, 1] -> mean pixel 128 +/- 55
MOTION_BASE = 40.0       # pattern amplitude = base + gain * arousal
MOTION_GAIN = 36.0       # gains keep b +/- amplitude inside [0, 255]


def _smooth_track(rng, frames, amplitude=0.85):
    """Sum of two random sinusoids, normalized to the given amplitude."""
    t = np.arange(frames) / frames
    signal = np.zeros(frames)
    for _ in range(2):
        cycles = rng.uniform(1.0, 4.0)
        phase = rng.uniform(0, 2 * np.pi)
        signal += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * cycles * t + phase)
    peak = np.abs(signal).max()
    if peak > 0:
        signal *= amplitude / peak
    return signal


def _checker():
    """Zero-mean multi-scale block pattern with unit peak amplitude."""
    plane = np.zeros((96, 96))
    for block in CHECKER_BLOCKS:
        tiles = np.add.outer(np.arange(96) // block, np.arange(96) // block)
        plane += np.where(tiles % 2 == 0, 1.0, -1.0)
    return plane / len(CHECKER_BLOCKS)


def render_frame(valence, arousal, k, rng, checker=None):
    """One 96 x 96 x 3 frame for scaled labels in [-1, 1] at frame index k."""
    checker = _checker() if checker is None else checker
    brightness = 128.0 + BRIGHTNESS_GAIN * valence
    amplitude = MOTION_BASE + MOTION_GAIN * arousal
    sign = 1.0 if k % 2 == 0 else -1.0
    plane = brightness + amplitude * sign * checker
    plane = plane + rng.normal(0.0, 1.0, size=plane.shape)
    return np.clip(plane, 0, 255).astype(np.uint8)[:, :, None].repeat(3, axis=2)


def _annotator_track(rng, values, fps=30.0, rate_hz=20.0):
    """Irregular (timestamp, value) pairs as a joystick log would contain."""
    duration = len(values) / fps
    count = max(2, int(duration * rate_hz))
    times = np.sort(rng.uniform(0.0, duration, size=count))
    times += np.arange(count) * 1e-6
    entries = []
    for t in times:
        frame = min(len(values) - 1, int(t * fps))
        entries.append((float(t), int(values[frame])))
    return entries


def generate(out_dir, videos=8, frames=300, seed=0):
    """Write the synthetic corpus; returns the meta rows."""
    out_dir = Path(out_dir)
    (out_dir / "records").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(exist_ok=True)
    (out_dir / "tracks").mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    checker = _checker()
    meta = []
    for vi in range(videos):
        video = f"synth{vi:02d}"
        valence = _smooth_track(rng, frames)
        arousal = _smooth_track(rng, frames)
        # decorrelate the two dimensions within each video, otherwise a model
        # can score arousal off the (easier) brightness channel by accident
        vv = valence - valence.mean()
        aa = arousal - arousal.mean()
        aa -= (aa @ vv) / (vv @ vv) * vv
        peak = np.abs(aa).max()
        if peak > 0:
            arousal = aa * (0.85 / peak)
        v_raw = np.round(valence * 1000).astype(int)
        a_raw = np.round(arousal * 1000).astype(int)
        recs = []
        for k in range(frames):
            image = render_frame(valence[k], arousal[k], k, rng, checker)
            recs.append(FrameRecord(f"{video}/{k + 1}", image,
                                    int(v_raw[k]), int(a_raw[k])))
        write_container(out_dir / "records" / f"{video}.vasq", recs)
        with open(out_dir / "annotations" / f"{video}.txt", "w") as fh:
            for k in range(frames):
                fh.write(f"{k + 1}\t{v_raw[k]}\t{a_raw[k]}\n")
        for dim, raw in (("valence", v_raw), ("arousal", a_raw)):
            with open(out_dir / "tracks" / f"{video}.{dim}.txt", "w") as fh:
                for t, v in _annotator_track(rng, raw):
                    fh.write(f"{t:.4f} {v}\n")
        meta.append({"id": video, "frames": frames, "fps": 30,
                     "gender": "f" if vi % 2 == 0 else "m",
                     "subject": f"subj{vi:02d}"})
    with open(out_dir / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return meta
