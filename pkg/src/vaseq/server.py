"""HTTP service backing the annotation/review UI.

JSON endpoints over a corpus directory (records/, annotations/, tracks/,
predictions/ plus meta.json):

    GET  /videos                          -> [{id, frames, fps, annotated_dims}]
    GET  /videos/{id}/frames/{k}          -> PNG bytes of frame k (1-based)
    POST /videos/{id}/annotations/{dim}   -> 204; body [{t, v}, ...]
    GET  /videos/{id}/groundtruth         -> [{k, valence, arousal}]
    GET  /videos/{id}/predictions         -> [{k, valence, arousal}]

Annotation posts persist as 'timestamp value' track files; writes are
serialized per video and never leave the corpus directory.  An optional
static directory (the built frontend) is served for all other paths.
"""

from __future__ import annotations

import io
import json
import re
import threading
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import records

_FRAME_RE = re.compile(r"^/videos/([\w.-]+)/frames/(\d+)$")
_ANNOT_RE = re.compile(r"^/videos/([\w.-]+)/annotations/(valence|arousal)$")
_GT_RE = re.compile(r"^/videos/([\w.-]+)/groundtruth$")
_PRED_RE = re.compile(r"^/videos/([\w.-]+)/predictions$")

_STATIC_TYPES = {".html": "text/html", ".js": "text/javascript",
                 ".css": "text/css", ".map": "application/json",
                 ".svg": "image/svg+xml", ".png": "image/png"}


class CorpusStore:
    """Read/write access to one corpus directory with per-video write locks."""

    def __init__(self, corpus_dir, cache_size=2):
        self.root = Path(corpus_dir)
        if not (self.root / "meta.json").exists():
            raise FileNotFoundError(f"{corpus_dir}: missing meta.json")
        self.meta = json.loads((self.root / "meta.json").read_text())
        self._by_id = {row["id"]: row for row in self.meta}
        self._locks = {row["id"]: threading.Lock() for row in self.meta}
        self._cache = OrderedDict()
        self._cache_size = cache_size
        self._cache_lock = threading.Lock()

    def videos(self):
        out = []
        for row in self.meta:
            dims = [dim for dim in ("valence", "arousal")
                    if (self.root / "tracks" / f"{row['id']}.{dim}.txt").exists()]
            out.append({"id": row["id"], "frames": row["frames"],
                        "fps": row["fps"], "annotated_dims": dims})
        return out

    def _frames(self, video):
        with self._cache_lock:
            if video in self._cache:
                self._cache.move_to_end(video)
                return self._cache[video]
        path = self.root / "records" / f"{video}.vasq"
        frames = {r.frame_number: r.image for r in records.iter_container(path)}
        with self._cache_lock:
            self._cache[video] = frames
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return frames

    def frame_png(self, video, k):
        if video not in self._by_id:
            return None
        frames = self._frames(video)
        image = frames.get(k)
        if image is None:
            return None
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(image).save(buf, format="PNG")
        return buf.getvalue()

    def groundtruth(self, video):
        path = self.root / "annotations" / f"{video}.txt"
        if not path.exists():
            return None
        rows = records.read_merged_annotations(path)
        return [{"k": k, "valence": v, "arousal": a} for k, v, a in rows]

    def predictions(self, video):
        path = self.root / "predictions" / f"{video}.csv"
        if not path.exists():
            return None
        out = []
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("k,"):
                return None
            for line in fh:
                parts = line.strip().split(",")
                if len(parts) == 3:
                    out.append({"k": int(parts[0]), "valence": float(parts[1]),
                                "arousal": float(parts[2])})
        return out

    def save_track(self, video, dim, samples):
        if video not in self._by_id:
            return False
        for row in samples:
            t, v = float(row["t"]), int(row["v"])
            if not (-1000 <= v <= 1000):
                raise ValueError(f"value {v} outside [-1000, 1000]")
        with self._locks[video]:
            tracks = self.root / "tracks"
            tracks.mkdir(exist_ok=True)
            with open(tracks / f"{video}.{dim}.txt", "w") as fh:
                for row in samples:
                    fh.write(f"{float(row['t']):.4f} {int(row['v'])}\n")
        return True


def make_handler(store: CorpusStore, ui_dir=None):
    ui_root = Path(ui_dir).resolve() if ui_dir else None

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, code, body=b"", content_type="application/json"):
            self.send_response(code)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            if body:
                self.wfile.write(body)

        def _json(self, payload, code=200):
            self._send(code, json.dumps(payload).encode())

        def do_OPTIONS(self):
            self._send(204)

        def do_GET(self):
            try:
                if self.path == "/videos":
                    return self._json(store.videos())
                match = _FRAME_RE.match(self.path)
                if match:
                    png = store.frame_png(match.group(1), int(match.group(2)))
                    if png is None:
                        return self._json({"error": "not found"}, 404)
                    return self._send(200, png, "image/png")
                match = _GT_RE.match(self.path)
                if match:
                    rows = store.groundtruth(match.group(1))
                    if rows is None:
                        return self._json({"error": "not found"}, 404)
                    return self._json(rows)
                match = _PRED_RE.match(self.path)
                if match:
                    rows = store.predictions(match.group(1))
                    if rows is None:
                        return self._json({"error": "not found"}, 404)
                    return self._json(rows)
                if ui_root is not None:
                    return self._static()
                return self._json({"error": "not found"}, 404)
            except Exception as exc:  # noqa: BLE001 - one-line diagnostic
                return self._json({"error": str(exc)}, 500)

        def _static(self):
            rel = self.path.split("?")[0].lstrip("/") or "index.html"
            target = (ui_root / rel).resolve()
            if not str(target).startswith(str(ui_root)) or not target.is_file():
                target = ui_root / "index.html"
                if not target.is_file():
                    return self._json({"error": "not found"}, 404)
            ctype = _STATIC_TYPES.get(target.suffix, "application/octet-stream")
            return self._send(200, target.read_bytes(), ctype)

        def do_POST(self):
            try:
                match = _ANNOT_RE.match(self.path)
                if not match:
                    return self._json({"error": "not found"}, 404)
                length = int(self.headers.get("Content-Length", 0))
                samples = json.loads(self.rfile.read(length) or b"[]")
                if store.save_track(match.group(1), match.group(2), samples):
                    return self._send(204)
                return self._json({"error": "unknown video"}, 404)
            except Exception as exc:  # noqa: BLE001
                return self._json({"error": str(exc)}, 400)

    return Handler


def serve(corpus_dir, port, host="127.0.0.1", ui_dir=None):
    store = CorpusStore(corpus_dir)
    server = ThreadingHTTPServer((host, port), make_handler(store, ui_dir))
    return server


def run(corpus_dir, port, host="127.0.0.1", ui_dir=None):
    server = serve(corpus_dir, port, host=host, ui_dir=ui_dir)
    try:
        server.serve_forever()
    finally:
        server.server_close()
