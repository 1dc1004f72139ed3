"""Shared helpers: synthetic images and tiny canned HTTP backends."""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import cv2
import numpy as np
import pytest

from retouchkit.image import ImageBuffer


def uniform_image(h, w, rgb) -> ImageBuffer:
    if np.isscalar(rgb):
        rgb = (rgb, rgb, rgb)
    data = np.empty((h, w, 3), dtype=np.float32)
    data[:, :] = np.asarray(rgb, dtype=np.float32)
    return ImageBuffer(data=data)


def random_image(rng, h, w) -> ImageBuffer:
    return ImageBuffer(data=rng.random((h, w, 3), dtype=np.float32))


def synthetic_photo(rng, size=128, base=8) -> ImageBuffer:
    """Smooth colorful field: low-res noise upsampled, like a blurry photo."""
    low = rng.random((base, base, 3)).astype(np.float32)
    up = cv2.resize(low, (size, size), interpolation=cv2.INTER_CUBIC)
    return ImageBuffer(data=np.clip(up, 0.0, 1.0))


def shuffled_copy(rng, img: ImageBuffer) -> ImageBuffer:
    """Pixel-permuted image: different content, identical global statistics."""
    flat = img.data.reshape(-1, 3).copy()
    rng.shuffle(flat, axis=0)
    return ImageBuffer(data=flat.reshape(img.data.shape))


class _CannedHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        status, content_type, payload = self.server.respond(self, body)
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


class CannedServer:
    """Single-purpose HTTP server for tests; hand it a respond() callable."""

    def __init__(self, respond):
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _CannedHandler)
        self._httpd.respond = respond
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}"

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def canned_server():
    servers = []

    def start(respond) -> CannedServer:
        server = CannedServer(respond)
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.close()


def chat_reply_server(start, replies):
    """Canned chat backend cycling through the given reply texts.

    Records each request payload in .requests for assertions.
    """
    requests_seen = []
    headers_seen = []
    counter = {"n": 0}

    def respond(handler, body):
        requests_seen.append(json.loads(body))
        headers_seen.append(dict(handler.headers))
        idx = min(counter["n"], len(replies) - 1)
        counter["n"] += 1
        reply = {"choices": [{"message": {"content": replies[idx]}}]}
        return 200, "application/json", json.dumps(reply).encode("utf-8")

    server = start(respond)
    server.requests = requests_seen
    server.headers_seen = headers_seen
    return server
