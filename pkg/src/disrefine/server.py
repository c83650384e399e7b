"""Read-only HTTP serving of the promptable refinement loop.

Endpoints (JSON unless noted):
  GET  /samples        -> [{"id": str, "width": int, "height": int}]
  GET  /image/<id>     -> PNG
  GET  /coarse/<id>    -> PNG
  POST /refine         body {"id": str, "box": [x0,y0,x1,y1]} -> PNG mask;
                       header X-Metrics carries per-request MAE when GT exists

Every /refine response is a pure function of (id, box); no request mutates
server state, so concurrent requests are safe.
"""
from __future__ import annotations

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import unquote, urlparse

import numpy as np
from PIL import Image

from .core import MetricConfig, PromptBox
from .dataio import DatasetManifest
from .errors import DisRefineError
from .metrics import mae
from .pipeline import quantize_mask
from .refiner import RefinerParams, refine


def _png_bytes(array: np.ndarray) -> bytes:
    """Encode a float [0,1] grayscale or RGB array as PNG."""
    data = np.round(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data).save(buf, format="PNG")
    return buf.getvalue()


class RefineService:
    """Shared immutable state plus per-id caches behind a lock."""

    def __init__(self, manifest: DatasetManifest, params: RefinerParams,
                 metric_cfg: MetricConfig = MetricConfig()):
        self.manifest = manifest
        self.params = params
        self.metric_cfg = metric_cfg
        self.samples = {s.id: s for s in manifest}
        self._lock = threading.Lock()
        self._images: dict[str, np.ndarray] = {}
        self._coarse: dict[str, np.ndarray | None] = {}
        self._gt: dict[str, np.ndarray | None] = {}

    def image(self, sid: str) -> np.ndarray:
        with self._lock:
            if sid not in self._images:
                self._images[sid] = self.samples[sid].load_image()
            return self._images[sid]

    def coarse(self, sid: str) -> np.ndarray | None:
        with self._lock:
            if sid not in self._coarse:
                self._coarse[sid] = self.samples[sid].load_coarse()
            return self._coarse[sid]

    def gt(self, sid: str) -> np.ndarray | None:
        with self._lock:
            if sid not in self._gt:
                try:
                    self._gt[sid] = self.samples[sid].load_gt(self.metric_cfg.binarize_threshold)
                except DisRefineError:
                    self._gt[sid] = None
            return self._gt[sid]

    def listing(self) -> list[dict]:
        out = []
        for sid in self.manifest.ids():
            img = self.image(sid)
            out.append({"id": sid, "width": int(img.shape[1]), "height": int(img.shape[0])})
        return out

    def refine_mask(self, sid: str, box: PromptBox) -> tuple[np.ndarray, float | None]:
        image = self.image(sid)
        coarse = self.coarse(sid)
        if coarse is None:
            coarse = np.zeros(image.shape[:2], dtype=np.float64)
        pred = quantize_mask(refine(image, coarse, box, self.params))
        gt = self.gt(sid)
        score = mae(pred, gt) if gt is not None else None
        return pred, score


def _make_handler(service: RefineService):
    class Handler(BaseHTTPRequestHandler):
        server_version = "disrefine"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _cors(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Expose-Headers", "X-Metrics")

        def _send(self, status: int, body: bytes, content_type: str, extra=None):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self._cors()
            for key, value in (extra or {}).items():
                self.send_header(key, value)
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, status: int, payload):
            self._send(status, json.dumps(payload).encode(), "application/json")

        def _send_error(self, status: int, reason: str):
            self._send_json(status, {"error": reason})

        def do_OPTIONS(self):
            self._send(204, b"", "text/plain")

        def do_GET(self):
            path = urlparse(self.path).path
            if path == "/samples":
                self._send_json(200, service.listing())
                return
            for prefix, getter in (("/image/", service.image), ("/coarse/", service.coarse)):
                if path.startswith(prefix):
                    sid = unquote(path[len(prefix):])
                    if sid not in service.samples:
                        self._send_error(404, f"unknown sample id {sid!r}")
                        return
                    data = getter(sid)
                    if data is None:
                        self._send_error(404, f"sample {sid!r} has no coarse mask")
                        return
                    self._send(200, _png_bytes(data), "image/png")
                    return
            self._send_error(404, f"no route for {path}")

        def do_POST(self):
            path = urlparse(self.path).path
            if path != "/refine":
                self._send_error(404, f"no route for {path}")
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length) or b"{}")
                sid = payload["id"]
                box_values = payload["box"]
                if not isinstance(box_values, (list, tuple)) or len(box_values) != 4:
                    raise ValueError("box must be [x0, y0, x1, y1]")
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                self._send_error(400, f"malformed request: {exc}")
                return
            if sid not in service.samples:
                self._send_error(404, f"unknown sample id {sid!r}")
                return
            image = service.image(sid)
            h, w = image.shape[:2]
            try:
                box = PromptBox(*(int(v) for v in box_values))
                box.validate(h, w)
            except (DisRefineError, TypeError, ValueError) as exc:
                self._send_error(400, f"invalid box: {exc}")
                return
            pred, score = service.refine_mask(sid, box)
            extra = {}
            if score is not None:
                extra["X-Metrics"] = json.dumps({"mae": score})
            self._send(200, _png_bytes(pred), "image/png", extra)

    return Handler


def serve_http(
    manifest: DatasetManifest,
    params: RefinerParams,
    bind: tuple[str, int] = ("127.0.0.1", 8008),
    metric_cfg: MetricConfig = MetricConfig(),
) -> ThreadingHTTPServer:
    """Build the threaded server; the caller decides when to serve_forever()."""
    service = RefineService(manifest, params, metric_cfg)
    server = ThreadingHTTPServer(bind, _make_handler(service))
    server.daemon_threads = True
    return server
