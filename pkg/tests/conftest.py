"""Shared fixtures: a scriptable stub chat-completions server and small
builders for transcripts and synthetic videos."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from talkeval.transcript import Token, tokenize


def tok(text: str) -> list[Token]:
    return tokenize(text)


def surfaces(tokens) -> list[str]:
    return [t.surface for t in tokens]


class StubChatServer:
    """Minimal chat-completions endpoint for tests.

    Behavior is scripted either with a queue of (status, content) replies or
    with a handler function mapping the request body to (status, content).
    Every received request body is recorded.
    """

    def __init__(self):
        self.requests: list[dict] = []
        self._queue: list[tuple[int, str]] = []
        self._handler = None
        self._lock = threading.Lock()

        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with stub._lock:
                    stub.requests.append(body)
                    if stub._queue:
                        status, content = stub._queue.pop(0)
                    elif stub._handler is not None:
                        status, content = stub._handler(body)
                    else:
                        status, content = 200, "OK"
                if status >= 400:
                    payload = json.dumps({"error": {"message": content}})
                else:
                    payload = json.dumps(
                        {"choices": [{"message": {"role": "assistant", "content": content}}]}
                    )
                data = payload.encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/v1"

    def enqueue(self, content: str, status: int = 200, repeat: int = 1):
        with self._lock:
            self._queue.extend([(status, content)] * repeat)

    def set_handler(self, fn):
        with self._lock:
            self._handler = fn

    def reset(self):
        with self._lock:
            self.requests.clear()
            self._queue.clear()
            self._handler = None

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture(scope="session")
def stub_server():
    server = StubChatServer()
    yield server
    server.close()


@pytest.fixture()
def chat_server(stub_server, monkeypatch):
    monkeypatch.setenv("TALKEVAL_API_KEY", "stub-key")
    stub_server.reset()
    return stub_server


def last_user_text(body: dict) -> str:
    """Extract the text of the last user message, whatever its shape."""
    content = body["messages"][-1]["content"]
    if isinstance(content, str):
        return content
    return " ".join(
        part.get("text", "") for part in content if isinstance(part, dict)
    )


def scripted_pipeline_handler(body: dict) -> tuple[int, str]:
    """Default stub brain for pipeline runs: identity post-edits, canned
    slide answers and summaries. Deterministic per request."""
    text = last_user_text(body)
    if "Transcript:" in text:
        return 200, text.split("Transcript:", 1)[1].strip()
    if "Raw answers:" in text:
        return 200, "The slide presents the system architecture and results."
    if "Slide summaries:" in text:
        return 200, "The talk walks through an ASR system and its evaluation."
    # slide questions land here
    return 200, "The slide shows a title and three bullet points."


def synthetic_video(tmp_path, n_scenes: int = 3, frames_per_scene: int = 8, fps: float = 1.0):
    """Feature file + frames dir + timed transcript for a tiny synthetic
    video with block-constant features (one block per scene)."""
    from talkeval.kts import save_features
    from talkeval.transcript import Segment, Transcript

    dim = max(4, n_scenes)
    rows = []
    for scene in range(n_scenes):
        row = np.zeros(dim)
        row[scene] = 1.0
        rows.extend([row] * frames_per_scene)
    features_path = tmp_path / "features.bin"
    save_features(features_path, np.array(rows), fps)

    frames_dir = tmp_path / "frames"
    frames_dir.mkdir(exist_ok=True)
    for i in range(1, n_scenes + 1):
        # content only has to be stable bytes; the pipeline never decodes
        (frames_dir / f"scene_{i:03d}.png").write_bytes(
            b"\x89PNG fake frame " + bytes([i])
        )

    scene_len_s = frames_per_scene / fps
    texts = [
        "welcome to the talk about birds models",
        "we evaluate the system on ten videos",
        "thank you for listening to this talk",
    ]
    segments = []
    for i in range(n_scenes):
        segments.append(
            Segment(
                id=f"utt_{i:02d}",
                tokens=tuple(tokenize(texts[i % len(texts)])),
                start_s=i * scene_len_s + 0.5,
                end_s=(i + 1) * scene_len_s - 0.5,
            )
        )
    transcript = Transcript(video_id="synthetic", segments=tuple(segments), role="hypothesis")
    return features_path, frames_dir, transcript
