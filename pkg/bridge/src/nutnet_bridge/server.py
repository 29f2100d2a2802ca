"""The bridge HTTP service.

Protocol (versioned via the ``X-Bridge-Version`` response header):

- ``GET /health`` -> ``{"model": str, "ready": bool}``
- ``POST /detect`` with a PNG body ->
  ``{"model": str, "time_ms": number, "boxes": [{"class", "class_id",
  "conf", "x1", "y1", "x2", "y2"}]}``

Errors are JSON objects ``{"error": str}`` with status 400 (undecodable
image), 413 (body over the configured limit), 404 (unknown path) or 503
(model not ready). An optional ``?conf=<floor>`` query parameter
overrides the configured confidence floor per request.

Configuration is taken from environment variables: ``BRIDGE_MODEL``
(default ``toy``), ``BRIDGE_PORT`` (default 8093), ``BRIDGE_CONF_FLOOR``
(default 0.0) and ``BRIDGE_MAX_BYTES`` (default 8 MiB).

One inference runs at a time; concurrent requests queue on a lock and
the service keeps no state between requests.
"""

from __future__ import annotations

import io
import json
import os
import sys
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import BRIDGE_PROTOCOL_VERSION
from .detectors import DetectorError, load_detector


@dataclass
class BridgeConfig:
    model: str = "toy"
    port: int = 8093
    conf_floor: float = 0.0
    max_bytes: int = 8 * 1024 * 1024

    @classmethod
    def from_env(cls) -> "BridgeConfig":
        return cls(
            model=os.environ.get("BRIDGE_MODEL", cls.model),
            port=int(os.environ.get("BRIDGE_PORT", cls.port)),
            conf_floor=float(os.environ.get("BRIDGE_CONF_FLOOR", cls.conf_floor)),
            max_bytes=int(os.environ.get("BRIDGE_MAX_BYTES", cls.max_bytes)),
        )


def _decode_png(body: bytes) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        img = Image.open(io.BytesIO(body))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ValueError(f"undecodable image: {exc}")
    return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


class _Handler(BaseHTTPRequestHandler):
    server_version = "nutnet-bridge"

    def _send_json(self, status: int, doc: dict) -> None:
        payload = json.dumps(doc).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("X-Bridge-Version", BRIDGE_PROTOCOL_VERSION)
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):  # quiet by default
        if os.environ.get("BRIDGE_VERBOSE"):
            super().log_message(fmt, *args)

    def do_GET(self):
        if urlparse(self.path).path != "/health":
            self._send_json(404, {"error": "unknown path"})
            return
        self._send_json(200, {
            "model": self.server.bridge_model_id,
            "ready": self.server.bridge_detector is not None,
        })

    def do_POST(self):
        url = urlparse(self.path)
        if url.path != "/detect":
            self._send_json(404, {"error": "unknown path"})
            return
        if self.server.bridge_detector is None:
            self._send_json(503, {"error": "model not ready"})
            return
        cfg = self.server.bridge_config
        length = int(self.headers.get("Content-Length", 0))
        if length > cfg.max_bytes:
            # drain the body so the client can finish writing before it
            # reads the error response
            remaining = length
            while remaining > 0:
                chunk = self.rfile.read(min(remaining, 1 << 20))
                if not chunk:
                    break
                remaining -= len(chunk)
            self._send_json(413, {
                "error": f"body of {length} bytes exceeds limit {cfg.max_bytes}"
            })
            return
        body = self.rfile.read(length)
        try:
            image = _decode_png(body)
        except ValueError as exc:
            self._send_json(400, {"error": str(exc)})
            return
        floor = cfg.conf_floor
        q = parse_qs(url.query)
        if "conf" in q:
            try:
                floor = float(q["conf"][0])
            except ValueError:
                self._send_json(400, {"error": "conf must be a number"})
                return
        with self.server.bridge_lock:
            t0 = time.perf_counter()
            try:
                boxes = self.server.bridge_detector.detect(image)
            except Exception as exc:
                self._send_json(500, {"error": f"inference failed: {exc}"})
                return
            dt_ms = (time.perf_counter() - t0) * 1e3
        self._send_json(200, {
            "model": self.server.bridge_model_id,
            "time_ms": dt_ms,
            "boxes": [b for b in boxes if b["conf"] >= floor],
        })


def make_server(config: BridgeConfig) -> ThreadingHTTPServer:
    """Build the HTTP server with its detector loaded.

    Raises DetectorError (and does not bind a socket) if the configured
    model cannot be loaded, so a misconfigured service refuses to start.
    """
    detector = load_detector(config.model)
    server = ThreadingHTTPServer(("127.0.0.1", config.port), _Handler)
    server.bridge_config = config
    server.bridge_detector = detector
    server.bridge_model_id = detector.model_id
    server.bridge_lock = threading.Lock()
    return server


def main(argv=None) -> int:
    config = BridgeConfig.from_env()
    try:
        server = make_server(config)
    except DetectorError as exc:
        print(f"refusing to start: {exc}", file=sys.stderr)
        return 1
    print(f"nutnet-bridge serving {server.bridge_model_id} "
          f"on port {server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
