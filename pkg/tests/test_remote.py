import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from regft.corpus import Problem
from regft.policy import DecodeConfig
from regft.remote import ProtocolError, RemoteBackend, RemoteConfig, RemoteError, remote_complete
from regft.rollout import RolloutError, sample_group


class _Server:
    """Tiny completion server; ``behaviour`` decides each response."""

    def __init__(self, behaviour):
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.requests.append(body)
                status, payload = behaviour(body, len(outer.requests))
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_port}/complete"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


DECODE = DecodeConfig(0.7, 0.9, 64)


def _answers(body, _):
    return 200, {"choices": [{"text": f"so \\boxed{{{i % 2}}}"} for i in range(body["n"])]}


def test_request_shape_and_completions():
    with _Server(_answers) as srv:
        texts = remote_complete(srv.url, "Question: q", DECODE, 4, timeout=5)
    assert len(texts) == 4
    assert srv.requests == [
        {"prompt": "Question: q", "n": 4, "temperature": 0.7, "top_p": 0.9, "max_tokens": 64}
    ]


def test_short_answer_requests_remainder():
    def short(body, k):
        return 200, {"choices": [{"text": "\\boxed{1}"}] * min(body["n"], 3)}

    with _Server(short) as srv:
        texts = remote_complete(srv.url, "p", DECODE, 7, timeout=5)
    assert len(texts) == 7
    assert [r["n"] for r in srv.requests] == [7, 4, 1]


def test_zero_requested_makes_no_call():
    with _Server(_answers) as srv:
        assert remote_complete(srv.url, "p", DECODE, 0) == []
    assert srv.requests == []


def test_server_errors_are_retried_then_reported():
    def failing(body, k):
        return 500, {"error": "busy"}

    with _Server(failing) as srv:
        with pytest.raises(RemoteError) as info:
            remote_complete(srv.url, "p", DECODE, 3, timeout=5, max_attempts=3, backoff=0.0)
    assert info.value.attempts == 3 and info.value.received == 0
    assert len(srv.requests) == 3


def test_transient_failure_recovers():
    def flaky(body, k):
        return (503, {}) if k == 1 else _answers(body, k)

    with _Server(flaky) as srv:
        assert len(remote_complete(srv.url, "p", DECODE, 2, timeout=5, backoff=0.0)) == 2


def test_malformed_response():
    with _Server(lambda b, k: (200, b"not json")) as srv:
        with pytest.raises(ProtocolError):
            remote_complete(srv.url, "p", DECODE, 1, timeout=5)
    with _Server(lambda b, k: (200, {"choices": [{"txt": 1}]})) as srv:
        with pytest.raises(ProtocolError):
            remote_complete(srv.url, "p", DECODE, 1, timeout=5)


def test_unreachable_endpoint():
    with pytest.raises(RemoteError):
        remote_complete("http://127.0.0.1:9/none", "p", DECODE, 1, timeout=1, max_attempts=2, backoff=0.0)


def test_backend_in_group_sampling():
    problem = Problem("a", "q", "r.", "1")
    with _Server(_answers) as srv:
        g = sample_group(RemoteBackend(RemoteConfig(srv.url, timeout=5)), problem, "standard", 6, DECODE, 0)
    assert g.rewards == [0, 1, 0, 1, 0, 1]
    assert len(srv.requests) == 1 and srv.requests[0]["n"] == 6
    assert all(t.tokens == [] for t in g.trajectories)


def test_backend_failure_is_a_rollout_error():
    problem = Problem("a", "q", "r.", "1")
    with _Server(lambda b, k: (500, {})) as srv:
        backend = RemoteBackend(RemoteConfig(srv.url, timeout=5, max_attempts=1, backoff=0.0))
        with pytest.raises(RolloutError):
            sample_group(backend, problem, "standard", 2, DECODE, 0)
