"""HTTP/JSON surface for the human annotation loop and run monitoring.

Three endpoints, consumed by the browser console (and by anything else
that can speak JSON):

- ``GET /api/queries``   pending samples awaiting labels
- ``POST /api/labels``   one label (hard index or per-annotator vote sets)
- ``GET /api/progress``  iteration / labeled / budget counters and last UA/WA

GETs never mutate state. POSTs funnel through the label queue's
single-writer commit path; replays carrying a known idempotency key return
the original outcome without committing twice. An optional shared secret
(header ``X-Annotator-Token``) gates every endpoint. True labels are never
serialized into any payload.

The bind address comes from the ``ALPOOL_BIND`` environment variable
(default 127.0.0.1); the port from the run config.
"""

from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from alpool.annotate import AnnotationConflict, AnnotationError, LabelQueue

DEFAULT_PORT = 8787


def bind_address() -> str:
    return os.environ.get("ALPOOL_BIND", "127.0.0.1")


class AnnotationService:
    """Glue between the HTTP handler, the queue and the running experiment."""

    def __init__(self, queue: LabelQueue, progress_fn, shared_secret: str | None = None,
                 ui_dir: str | Path | None = None):
        self.queue = queue
        self.progress_fn = progress_fn
        self.shared_secret = shared_secret
        self.ui_dir = Path(ui_dir) if ui_dir else None

    def queries(self) -> list[dict]:
        return [entry.payload for entry in self.queue.open_entries()]

    def post_label(self, body: dict) -> dict:
        if not isinstance(body, dict):
            raise AnnotationError("body must be a JSON object")
        unknown = set(body) - {"sample_id", "hard", "votes", "annotator_id", "idempotency_key"}
        if unknown:
            raise AnnotationError(f"unknown fields: {sorted(unknown)}")
        if "sample_id" not in body or "annotator_id" not in body:
            raise AnnotationError("sample_id and annotator_id are required")
        return self.queue.post_label(
            sample_id=body["sample_id"],
            annotator_id=body["annotator_id"],
            hard=body.get("hard"),
            votes=body.get("votes"),
            idempotency_key=body.get("idempotency_key"),
        )

    def progress(self) -> dict:
        return self.progress_fn()


class _Handler(BaseHTTPRequestHandler):
    service: AnnotationService  # set on the subclass built in start_service

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        pass

    def _send(self, status: int, payload):
        blob = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def _authorized(self) -> bool:
        secret = self.service.shared_secret
        if secret is None:
            return True
        return self.headers.get("X-Annotator-Token") == secret

    def _serve_static(self, path: str) -> bool:
        root = self.service.ui_dir
        if root is None:
            return False
        relative = "index.html" if path in ("/", "") else path.lstrip("/")
        target = (root / relative).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            return False
        types = {".html": "text/html", ".js": "text/javascript", ".css": "text/css",
                 ".map": "application/json", ".png": "image/png"}
        blob = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", types.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)
        return True

    def do_GET(self):
        if not self._authorized():
            self._send(401, {"error": "missing or wrong X-Annotator-Token"})
            return
        path = self.path.split("?")[0]
        if path == "/api/queries":
            self._send(200, self.service.queries())
        elif path == "/api/progress":
            self._send(200, self.service.progress())
        elif self._serve_static(path):
            return
        else:
            self._send(404, {"error": f"no such endpoint {path}"})

    def do_POST(self):
        if not self._authorized():
            self._send(401, {"error": "missing or wrong X-Annotator-Token"})
            return
        path = self.path.split("?")[0]
        if path != "/api/labels":
            self._send(404, {"error": f"no such endpoint {path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length) or b"{}")
        except (ValueError, json.JSONDecodeError):
            self._send(400, {"error": "body is not valid JSON"})
            return
        try:
            result = self.service.post_label(body)
        except AnnotationConflict as err:
            self._send(409, {"error": str(err)})
        except AnnotationError as err:
            self._send(400, {"error": str(err)})
        else:
            self._send(200, result)


def start_service(
    queue: LabelQueue,
    progress_fn,
    port: int = DEFAULT_PORT,
    shared_secret: str | None = None,
    ui_dir=None,
    host: str | None = None,
) -> ThreadingHTTPServer:
    """Start the annotation server on a daemon thread; returns the server."""
    service = AnnotationService(queue, progress_fn, shared_secret=shared_secret, ui_dir=ui_dir)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host or bind_address(), port), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
