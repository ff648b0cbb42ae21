"""Sequence-record container: one binary file per video holding cropped
96 x 96 x 3 frames with raw valence/arousal labels.

Wire format (little-endian):
    header: magic "VASQ", version u16 = 1, record count u32
    record: id length u16, id bytes (UTF-8), image 96*96*3 u8 row-major
            (H, W, C), valence i16, arousal i16, CRC32 u32
The CRC covers the record payload, i.e. every record byte before it.
Records are stored in ascending frame order and round-trip byte-exactly.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"VASQ"
VERSION = 1
IMAGE_SHAPE = (96, 96, 3)
IMAGE_BYTES = 96 * 96 * 3
LABEL_MIN, LABEL_MAX = -1000, 1000

_HEADER = struct.Struct("<4sHI")
_ID_LEN = struct.Struct("<H")
_LABELS = struct.Struct("<hh")
_CRC = struct.Struct("<I")


class RecordError(ValueError):
    pass


@dataclass
class FrameRecord:
    frame_id: str          # "videoName/frameNumber"
    image: np.ndarray      # 96 x 96 x 3 uint8
    valence: int
    arousal: int

    def validate(self):
        if self.frame_id.count("/") != 1:
            raise RecordError(f"frame id {self.frame_id!r} must be video/frameNo")
        video, frame_no = self.frame_id.split("/")
        if not video:
            raise RecordError(f"frame id {self.frame_id!r} has empty video name")
        if not frame_no.isdigit() or int(frame_no) <= 0:
            raise RecordError(f"frame number in {self.frame_id!r} must be a positive integer")
        if self.image.shape != IMAGE_SHAPE or self.image.dtype != np.uint8:
            raise RecordError(f"{self.frame_id}: image must be uint8 {IMAGE_SHAPE}, "
                              f"got {self.image.dtype} {self.image.shape}")
        for name, value in (("valence", self.valence), ("arousal", self.arousal)):
            if not (LABEL_MIN <= value <= LABEL_MAX):
                raise RecordError(f"{self.frame_id}: {name} {value} outside "
                                  f"[{LABEL_MIN}, {LABEL_MAX}]")

    @property
    def video(self):
        return self.frame_id.split("/")[0]

    @property
    def frame_number(self):
        return int(self.frame_id.split("/")[1])


def encode_record(record: FrameRecord) -> bytes:
    record.validate()
    id_bytes = record.frame_id.encode("utf-8")
    payload = (_ID_LEN.pack(len(id_bytes)) + id_bytes +
               record.image.tobytes() +
               _LABELS.pack(record.valence, record.arousal))
    return payload + _CRC.pack(zlib.crc32(payload))


def write_container(path, records):
    """Write records (ascending frame order enforced) to one container."""
    records = list(records)
    order = [r.frame_number for r in records]
    if order != sorted(order):
        records = sorted(records, key=lambda r: r.frame_number)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(records)))
        for record in records:
            fh.write(encode_record(record))
    return path


def iter_container(path):
    """Yield FrameRecords, verifying structure and per-record CRCs."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise RecordError(f"{path}: truncated header")
        magic, version, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise RecordError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise RecordError(f"{path}: unsupported version {version}")
        for i in range(count):
            id_len_raw = fh.read(_ID_LEN.size)
            if len(id_len_raw) < _ID_LEN.size:
                raise RecordError(f"{path}: truncated record {i}")
            (id_len,) = _ID_LEN.unpack(id_len_raw)
            rest = fh.read(id_len + IMAGE_BYTES + _LABELS.size + _CRC.size)
            if len(rest) < id_len + IMAGE_BYTES + _LABELS.size + _CRC.size:
                raise RecordError(f"{path}: truncated record {i}")
            payload = id_len_raw + rest[:-_CRC.size]
            (crc,) = _CRC.unpack(rest[-_CRC.size:])
            if zlib.crc32(payload) != crc:
                raise RecordError(f"{path}: CRC mismatch in record {i}")
            frame_id = rest[:id_len].decode("utf-8")
            image = np.frombuffer(
                rest[id_len:id_len + IMAGE_BYTES], dtype=np.uint8
            ).reshape(IMAGE_SHAPE).copy()
            valence, arousal = _LABELS.unpack(
                rest[id_len + IMAGE_BYTES:id_len + IMAGE_BYTES + _LABELS.size])
            yield FrameRecord(frame_id, image, valence, arousal)


def read_container(path):
    return list(iter_container(path))


def read_merged_annotations(path):
    """Parse a merged annotation file: 'frameNumber<TAB>valence<TAB>arousal'."""
    rows = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise RecordError(f"{path}:{line_no}: expected 3 tab-separated fields")
            rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
    return rows


def load_frame_image(frames_dir, frame_number):
    """Load one frame as a 96 x 96 x 3 uint8 array.

    Accepts '<n>.npy' raw arrays or '<n>.png' images; wrong sizes are
    rejected rather than resized.
    """
    frames_dir = Path(frames_dir)
    npy = frames_dir / f"{frame_number}.npy"
    if npy.exists():
        image = np.load(npy)
    else:
        png = frames_dir / f"{frame_number}.png"
        if not png.exists():
            return None
        from PIL import Image

        image = np.asarray(Image.open(png).convert("RGB"))
    if image.shape != IMAGE_SHAPE:
        raise RecordError(f"frame {frame_number}: expected {IMAGE_SHAPE}, "
                          f"got {image.shape}")
    return image.astype(np.uint8)


def write_records(merged_path, frames_dir, out_path, video_name=None):
    """Pack one video's frames plus its merged annotations into a container.

    Every annotated frame must have an image file; a missing frame aborts
    with an error naming the frame id.
    """
    merged_path = Path(merged_path)
    video = video_name or merged_path.stem
    rows = read_merged_annotations(merged_path)
    records = []
    for frame_number, valence, arousal in sorted(rows):
        frame_id = f"{video}/{frame_number}"
        image = load_frame_image(frames_dir, frame_number)
        if image is None:
            raise RecordError(f"missing frame image for {frame_id}")
        records.append(FrameRecord(frame_id, image, valence, arousal))
    return write_container(out_path, records)


def container_size(records):
    """Expected byte length: header plus per-record encoded lengths."""
    total = _HEADER.size
    for record in records:
        total += (_ID_LEN.size + len(record.frame_id.encode("utf-8")) +
                  IMAGE_BYTES + _LABELS.size + _CRC.size)
    return total
