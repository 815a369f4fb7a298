"""Deterministic chat-completion stub endpoint for tests.

Real model scores are not reproducible without private data and model
access, so every inference path in the suite runs against this stub. The
default responder answers from the sentence text alone, so repeated runs
give byte-identical predictions.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable


def extract_sentence(user_content: str) -> str:
    """Pull the sentence under test back out of the rendered prompt."""
    for line in user_content.splitlines():
        if line.startswith("Sentence: "):
            return line[len("Sentence: "):]
    return ""


def parity_responder(user_content: str) -> str:
    sentence = extract_sentence(user_content)
    return "met" if len(sentence) % 2 == 0 else "not met"


class StubLLMServer:
    def __init__(self, responder: Callable[[str], str] = parity_responder) -> None:
        self.responder = responder
        self.requests_seen = 0
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                outer.requests_seen += 1
                user = next(
                    (m["content"] for m in body.get("messages", []) if m.get("role") == "user"),
                    "",
                )
                content = outer.responder(user)
                payload = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": content}}]}
                ).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args: object) -> None:
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def start(self) -> "StubLLMServer":
        self.thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
