"""Remote backend client against a live local server speaking the wire protocol."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from weaklab.backends import (
    EntailmentQuery,
    MaskFillQuery,
    PermanentBackendError,
    RemoteBackend,
    TransientBackendError,
)


class _Handler(BaseHTTPRequestHandler):
    server_version = "stub"

    def log_message(self, *args):  # keep test output quiet
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        behavior = self.server.behavior
        self.server.requests.append((self.path, payload))
        status, body = behavior(self.path, payload, len(self.server.requests))
        encoded = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(encoded)))
        self.end_headers()
        self.wfile.write(encoded)


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.requests = []
    server.behavior = lambda path, payload, n: (200, {})
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        thread.join(timeout=5)


def _endpoint(server) -> str:
    host, port = server.server_address
    return f"http://{host}:{port}"


def _score_by_keyword(path, payload, n):
    if path == "/v1/entail":
        scores = [
            0.9 if "happy" in payload["premise"] and "positive" in h else 0.2
            for h in payload["hypotheses"]
        ]
        return 200, {"scores": scores}
    if path == "/v1/mask_fill":
        log_probs = [0.5 if c == "positive" else -0.5 for c in payload["candidates"]]
        return 200, {"log_probs": log_probs}
    return 404, {"error": "no such route", "retryable": False}


class TestRemoteBackend:
    def test_entail_round_trip(self, stub_server):
        stub_server.behavior = _score_by_keyword
        backend = RemoteBackend(_endpoint(stub_server), max_retries=0)
        result = backend.entail(
            EntailmentQuery("I am happy", ("it is positive", "it is negative"))
        )
        assert result.scores == (0.9, 0.2)
        path, payload = stub_server.requests[0]
        assert path == "/v1/entail"
        assert payload == {
            "premise": "I am happy",
            "hypotheses": ["it is positive", "it is negative"],
        }

    def test_mask_fill_round_trip(self, stub_server):
        stub_server.behavior = _score_by_keyword
        backend = RemoteBackend(_endpoint(stub_server), max_retries=0, mask_marker="<mask>")
        result = backend.mask_fill(
            MaskFillQuery("nice <mask> day", "<mask>", ("positive", "negative"))
        )
        assert result.log_probs == (0.5, -0.5)
        _, payload = stub_server.requests[0]
        assert payload["mask_marker"] == "<mask>"

    def test_retries_transient_then_succeeds(self, stub_server):
        def flaky(path, payload, n):
            if n < 3:
                return 503, {"error": "warming up", "retryable": True}
            return 200, {"scores": [0.6, 0.4]}

        stub_server.behavior = flaky
        backend = RemoteBackend(_endpoint(stub_server), max_retries=3, backoff=0.01)
        result = backend.entail(EntailmentQuery("x", ("a", "b")))
        assert result.scores == (0.6, 0.4)
        assert len(stub_server.requests) == 3

    def test_transient_exhaustion_raises(self, stub_server):
        stub_server.behavior = lambda p, q, n: (503, {"error": "down", "retryable": True})
        backend = RemoteBackend(_endpoint(stub_server), max_retries=2, backoff=0.01)
        with pytest.raises(TransientBackendError, match="down"):
            backend.entail(EntailmentQuery("x", ("a", "b")))
        assert len(stub_server.requests) == 3

    def test_permanent_error_not_retried(self, stub_server):
        stub_server.behavior = lambda p, q, n: (
            400, {"error": "bad verbalizer", "retryable": False},
        )
        backend = RemoteBackend(_endpoint(stub_server), max_retries=3, backoff=0.01)
        with pytest.raises(PermanentBackendError, match="bad verbalizer"):
            backend.entail(EntailmentQuery("x", ("a", "b")))
        assert len(stub_server.requests) == 1

    def test_5xx_without_flag_is_transient(self, stub_server):
        stub_server.behavior = lambda p, q, n: (500, {"error": "oops"})
        backend = RemoteBackend(_endpoint(stub_server), max_retries=1, backoff=0.01)
        with pytest.raises(TransientBackendError):
            backend.entail(EntailmentQuery("x", ("a", "b")))
        assert len(stub_server.requests) == 2

    def test_malformed_response_is_permanent(self, stub_server):
        stub_server.behavior = lambda p, q, n: (200, {"scores": [0.5]})
        backend = RemoteBackend(_endpoint(stub_server), max_retries=0)
        with pytest.raises(PermanentBackendError, match="expected 2 scores"):
            backend.entail(EntailmentQuery("x", ("a", "b")))

    def test_connection_failure_is_transient(self):
        backend = RemoteBackend("http://127.0.0.1:1", max_retries=1, backoff=0.01, timeout=0.5)
        with pytest.raises(TransientBackendError):
            backend.entail(EntailmentQuery("x", ("a",)))
