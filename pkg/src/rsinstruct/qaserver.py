"""Local HTTP service exposing the review API and the static review UI.

Single-writer per session: mutations serialize behind a per-session lock and
are persisted (fsynced) before the response goes out, so any acknowledged
verdict survives a crash of the process.
"""
from __future__ import annotations

import json
import mimetypes
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from .qareview import (
    ConflictError,
    QaError,
    SessionStore,
    accuracy_report,
    sentence_category,
)

_SESSION_RE = re.compile(r"^/api/sessions/([A-Za-z0-9._\-]+)(/.*)?$")


def session_view(session) -> dict:
    """Session snapshot plus derived per-sentence categories for the UI."""
    doc = session.to_dict()
    for sentence in doc["sentences"]:
        verdicts = [p["verdict"] for p in sentence["pieces"]]
        try:
            sentence["category"] = sentence_category(verdicts)
        except QaError:
            sentence["category"] = None
    doc["complete"] = session.is_complete()
    return doc


class ReviewService:
    def __init__(self, store_dir: Path, frontend_dir: Optional[Path] = None):
        self.store = SessionStore(store_dir)
        self.frontend_dir = Path(frontend_dir) if frontend_dir else None
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    # -- api handlers returning (status, payload) --

    def list_sessions(self):
        out = []
        for sid in self.store.list_sessions():
            session = self.store.load(sid)
            out.append(
                {
                    "session_id": sid,
                    "revision": session.revision,
                    "complete": session.is_complete(),
                    "pairs": len(session.pairs),
                    "sentences": len(session.sentences),
                }
            )
        return 200, {"sessions": out}

    def get_session(self, session_id: str):
        return 200, session_view(self.store.load(session_id))

    def get_report(self, session_id: str, partial: bool):
        session = self.store.load(session_id)
        return 200, accuracy_report(session, partial=partial)

    def mutate(self, session_id: str, body: dict):
        action = body.get("action", "verdict")
        expected = body.get("revision")
        if expected is not None:
            expected = int(expected)
        with self.lock_for(session_id):
            if action == "verdict":
                session = self.store.mutate(
                    session_id, expected, "record_verdict",
                    int(body["sentence"]), int(body["piece"]), str(body["verdict"]),
                )
            elif action == "split":
                session = self.store.mutate(
                    session_id, expected, "split_piece",
                    int(body["sentence"]), int(body["piece"]), int(body["offset"]),
                )
            elif action == "merge":
                session = self.store.mutate(
                    session_id, expected, "merge_pieces",
                    int(body["sentence"]), int(body["piece"]),
                )
            else:
                raise QaError(f"unknown action {action!r}")
        return 200, {"revision": session.revision, "complete": session.is_complete()}


class _Handler(BaseHTTPRequestHandler):
    service: ReviewService  # injected by make_server

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, status: int, payload: dict):
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _send_file(self, path: Path):
        ctype = mimetypes.guess_type(str(path))[0] or "application/octet-stream"
        data = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _static(self, rel: str):
        root = self.service.frontend_dir
        if root is None:
            self._send_json(404, {"error": "no frontend built; API-only mode"})
            return
        target = (root / rel.lstrip("/")).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            self._send_json(404, {"error": f"not found: {rel}"})
            return
        self._send_file(target)

    def do_GET(self):
        try:
            path, _, query = self.path.partition("?")
            if path == "/api/sessions":
                status, payload = self.service.list_sessions()
                self._send_json(status, payload)
                return
            m = _SESSION_RE.match(path)
            if m:
                sid, rest = m.group(1), m.group(2) or ""
                if rest == "" or rest == "/":
                    status, payload = self.service.get_session(sid)
                elif rest == "/report":
                    partial = "partial=1" in query or "partial=true" in query
                    status, payload = self.service.get_report(sid, partial)
                elif rest.startswith("/image/"):
                    self._serve_pair_image(sid, rest[len("/image/"):])
                    return
                else:
                    status, payload = 404, {"error": f"unknown endpoint {rest}"}
                self._send_json(status, payload)
                return
            if path == "/":
                self._static("index.html")
                return
            self._static(path)
        except ConflictError as exc:
            self._send_json(409, {"error": str(exc)})
        except QaError as exc:
            self._send_json(400, {"error": str(exc)})
        except Exception as exc:  # pragma: no cover - defensive
            self._send_json(500, {"error": f"{type(exc).__name__}: {exc}"})

    def _serve_pair_image(self, session_id: str, pair_idx: str):
        session = self.service.store.load(session_id)
        try:
            pair = session.pairs[int(pair_idx)]
        except (ValueError, IndexError):
            self._send_json(404, {"error": f"no pair {pair_idx}"})
            return
        uri = pair.get("uri", "")
        path = Path(uri)
        if uri and not uri.startswith(("demo://", "synthetic://")) and path.is_file():
            self._send_file(path)
        else:
            self._send_json(404, {"error": f"image bytes unavailable for {uri or 'pair'}"})

    def do_POST(self):
        try:
            m = _SESSION_RE.match(self.path.partition("?")[0])
            if not m:
                self._send_json(404, {"error": "unknown endpoint"})
                return
            sid, rest = m.group(1), m.group(2) or ""
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length) or b"{}")
            action = {"/verdict": "verdict", "/split": "split", "/merge": "merge"}.get(rest)
            if action is None:
                self._send_json(404, {"error": f"unknown endpoint {rest}"})
                return
            body["action"] = action
            status, payload = self.service.mutate(sid, body)
            self._send_json(status, payload)
        except ConflictError as exc:
            self._send_json(409, {"error": str(exc)})
        except (QaError, KeyError, ValueError) as exc:
            self._send_json(400, {"error": f"{type(exc).__name__}: {exc}"})
        except Exception as exc:  # pragma: no cover - defensive
            self._send_json(500, {"error": f"{type(exc).__name__}: {exc}"})


def make_server(store_dir: Path, host: str = "127.0.0.1", port: int = 0,
                frontend_dir: Optional[Path] = None) -> ThreadingHTTPServer:
    service = ReviewService(store_dir, frontend_dir=frontend_dir)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(store_dir: Path, host: str = "127.0.0.1", port: int = 0,
                  frontend_dir: Optional[Path] = None) -> None:
    server = make_server(store_dir, host, port, frontend_dir)
    bound = f"http://{server.server_address[0]}:{server.server_address[1]}"
    print(f"review service listening on {bound}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
