"""HTTP control surface for a running engine.

Versioned endpoints, JSON bodies, one server-push channel:

    GET  /v1/state              engine + per-channel snapshot
    POST /v1/control            operator event; applied at the next window boundary
    GET  /v1/events             server-sent events: segment / boundary / underrun feed
    GET  /v1/spectrogram/<ch>   PNG of the channel's last decoded segment

Invalid events get a 400 with a machine-readable reason and never
disturb the stream. The optional static root serves the operator
console; the API itself has no pages.
"""

from __future__ import annotations

import io
import json
import mimetypes
import os
import queue
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .engine import Engine
from .errors import ConfigError


def _png_from_mel(mel: np.ndarray) -> bytes:
    from PIL import Image

    lo, hi = float(mel.min()), float(mel.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = ((mel - lo) * scale).astype(np.uint8)
    img = img[::-1]  # low frequencies at the bottom
    buf = io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="PNG")
    return buf.getvalue()


class ControlService:
    def __init__(self, engine: Engine, host: str = "127.0.0.1", port: int = 0,
                 static_root: str | None = None):
        self.engine = engine
        self.static_root = static_root
        service = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def _cors(self):
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Headers", "Content-Type")
                self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")

            def _json(self, status: int, payload: dict):
                body = json.dumps(payload).encode()
                self.send_response(status)
                self._cors()
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_OPTIONS(self):
                self.send_response(204)
                self._cors()
                self.send_header("Content-Length", "0")
                self.end_headers()

            def do_GET(self):
                if self.path == "/v1/state":
                    self._json(200, service.engine.state())
                elif self.path == "/v1/events":
                    self._sse()
                elif self.path.startswith("/v1/spectrogram/"):
                    self._spectrogram()
                elif service.static_root is not None:
                    self._static()
                else:
                    self._json(404, {"error": f"no such path {self.path}"})

            def do_POST(self):
                if self.path != "/v1/control":
                    self._json(404, {"error": f"no such path {self.path}"})
                    return
                try:
                    n = int(self.headers.get("Content-Length", 0))
                    event = json.loads(self.rfile.read(n) or b"{}")
                except (ValueError, json.JSONDecodeError) as e:
                    self._json(400, {"error": f"body is not valid JSON: {e}"})
                    return
                try:
                    result = service.engine.submit_control(event)
                except ConfigError as e:
                    self._json(400, {"error": str(e)})
                    return
                self._json(202, result)

            def _spectrogram(self):
                tail = self.path[len("/v1/spectrogram/"):].removesuffix(".png")
                try:
                    cid = int(tail)
                    if not 0 <= cid < len(service.engine.channels):
                        raise IndexError
                    mel = service.engine.last_mel(cid)
                except (ValueError, IndexError):
                    self._json(404, {"error": f"no such channel {tail!r}"})
                    return
                if mel is None:
                    self._json(404, {"error": f"channel {cid} has no segment yet"})
                    return
                body = _png_from_mel(mel)
                self.send_response(200)
                self._cors()
                self.send_header("Content-Type", "image/png")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def _sse(self):
                sub = service.engine.subscribe()
                try:
                    self.send_response(200)
                    self._cors()
                    self.send_header("Content-Type", "text/event-stream")
                    self.send_header("Cache-Control", "no-cache")
                    self.send_header("Connection", "close")
                    self.end_headers()
                    self.wfile.write(b": connected\n\n")
                    self.wfile.flush()
                    while not service._shutdown.is_set():
                        try:
                            event = sub.get(timeout=0.5)
                        except queue.Empty:
                            self.wfile.write(b": ping\n\n")
                            self.wfile.flush()
                            continue
                        data = json.dumps(event)
                        self.wfile.write(f"data: {data}\n\n".encode())
                        self.wfile.flush()
                except (BrokenPipeError, ConnectionResetError):
                    pass
                finally:
                    service.engine.unsubscribe(sub)

            def _static(self):
                rel = self.path.lstrip("/") or "index.html"
                rel = os.path.normpath(rel)
                if rel.startswith(".."):
                    self._json(404, {"error": "bad path"})
                    return
                full = os.path.join(service.static_root, rel)
                if not os.path.isfile(full):
                    self._json(404, {"error": f"no such path {self.path}"})
                    return
                ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
                with open(full, "rb") as fh:
                    body = fh.read()
                self.send_response(200)
                self._cors()
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self._shutdown = threading.Event()
        self.server = ThreadingHTTPServer((host, port), Handler)
        self.server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(
            target=self.server.serve_forever, name="soundloom-service", daemon=True
        )
        self._thread.start()

    def stop(self):
        self._shutdown.set()
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
