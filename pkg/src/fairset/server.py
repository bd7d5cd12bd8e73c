"""HTTP front door for the review session: JSON API plus static UI assets.

All state lives in the Session (and hence its log); the browser is a thin
client. Verdict writes are serialized behind one lock, so concurrent readers
are always safe and double-submits surface as 409s.
"""

from __future__ import annotations

import json
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import ConflictError
from .session import Session

FASHION_CLASS_NAMES = [
    "T-shirt/top", "Trouser", "Pullover", "Dress", "Coat",
    "Sandal", "Shirt", "Sneaker", "Bag", "Ankle boot",
]

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}

_PLACEHOLDER_PAGE = b"""<!doctype html>
<html><head><title>fairset review</title></head>
<body><h1>fairset labeling API</h1>
<p>No UI bundle found. Build the frontend (see frontend/README.md) and pass
its dist directory via --ui-dir, or drive the JSON API directly:</p>
<ul><li>GET /api/session</li><li>GET /api/pairs/next</li>
<li>POST /api/verdicts</li><li>GET /api/progress</li></ul>
</body></html>"""


def class_names_for(dataset_name: str) -> list[str]:
    if "fashion" in dataset_name.lower():
        return FASHION_CLASS_NAMES
    return [str(i) for i in range(10)]


class LabelingServer:
    def __init__(self, session: Session, static_dir=None, class_names: list[str] | None = None):
        self.session = session
        self.static_dir = Path(static_dir) if static_dir else None
        self.class_names = class_names or class_names_for(session.dataset_name)
        self._write_lock = threading.Lock()
        self._httpd: ThreadingHTTPServer | None = None

    # --- payload builders -----------------------------------------------------

    def session_payload(self) -> dict:
        p = self.session.progress()
        return {
            "dataset": self.session.dataset_name,
            "analyst": self.session.analyst,
            "ranking_digest": self.session.ranking_digest,
            "class_names": self.class_names,
            **p,
        }

    def next_pair_payload(self) -> dict:
        pair = self.session.next_pair()
        if pair is None:
            return {"complete": True, "progress": self.session.progress()}
        return {
            "complete": False,
            "test_idx": pair.test_idx,
            "train_idx": pair.train_idx,
            "distance": pair.distance,
            "class": pair.class_label,
            "class_name": self.class_names[pair.class_label],
            "test_image": pair.test_image.reshape(-1).astype(int).tolist(),
            "train_image": pair.train_image.reshape(-1).astype(int).tolist(),
            "signals": pair.signals.to_dict(),
            "progress": pair.progress,
        }

    def submit_verdict(self, body: dict) -> tuple[int, dict]:
        decision = body.get("decision")
        test_idx, train_idx = body.get("test_idx"), body.get("train_idx")
        if not isinstance(test_idx, int) or not isinstance(train_idx, int):
            return HTTPStatus.BAD_REQUEST, {"error": "test_idx and train_idx are required"}
        try:
            with self._write_lock:
                progress = self.session.record_verdict(
                    decision, test_idx=test_idx, train_idx=train_idx
                )
        except ConflictError as e:
            return HTTPStatus.CONFLICT, {"error": str(e), "progress": self.session.progress()}
        return HTTPStatus.OK, {"ok": True, "progress": progress}

    # --- plumbing ---------------------------------------------------------------

    def make_handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):  # tests stay quiet
                pass

            def _send_json(self, status, payload):
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                path = self.path.split("?")[0]
                if path == "/api/session":
                    self._send_json(HTTPStatus.OK, server.session_payload())
                elif path == "/api/pairs/next":
                    self._send_json(HTTPStatus.OK, server.next_pair_payload())
                elif path == "/api/progress":
                    self._send_json(HTTPStatus.OK, server.session.progress())
                else:
                    self._send_static(path)

            def do_POST(self):
                path = self.path.split("?")[0]
                if path != "/api/verdicts":
                    self._send_json(HTTPStatus.NOT_FOUND, {"error": "unknown endpoint"})
                    return
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._send_json(HTTPStatus.BAD_REQUEST, {"error": "invalid JSON"})
                    return
                status, payload = server.submit_verdict(body)
                self._send_json(status, payload)

            def _send_static(self, path):
                if path == "/":
                    path = "/index.html"
                if server.static_dir is not None:
                    target = (server.static_dir / path.lstrip("/")).resolve()
                    inside = str(target).startswith(str(server.static_dir.resolve()))
                    if inside and target.is_file():
                        body = target.read_bytes()
                        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
                        self.send_response(HTTPStatus.OK)
                        self.send_header("Content-Type", ctype)
                        self.send_header("Content-Length", str(len(body)))
                        self.end_headers()
                        self.wfile.write(body)
                        return
                if path == "/index.html":
                    self.send_response(HTTPStatus.OK)
                    self.send_header("Content-Type", "text/html; charset=utf-8")
                    self.send_header("Content-Length", str(len(_PLACEHOLDER_PAGE)))
                    self.end_headers()
                    self.wfile.write(_PLACEHOLDER_PAGE)
                    return
                self._send_json(HTTPStatus.NOT_FOUND, {"error": f"no such path {path}"})

        return Handler

    def start(self, port: int = 0, host: str = "127.0.0.1") -> int:
        """Bind and serve on a background thread; returns the bound port."""
        self._httpd = ThreadingHTTPServer((host, port), self.make_handler())
        thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        thread.start()
        return self._httpd.server_address[1]

    def serve_forever(self, port: int, host: str = "127.0.0.1") -> None:
        self._httpd = ThreadingHTTPServer((host, port), self.make_handler())
        try:
            self._httpd.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            self._httpd.server_close()

    def stop(self):
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None
