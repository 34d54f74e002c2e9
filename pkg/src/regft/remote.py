"""Text-completion client for a remote model behind a small JSON-over-HTTP API.

Request body::

    {"prompt": str, "n": int, "temperature": float, "top_p": float, "max_tokens": int}

Response body::

    {"choices": [{"text": str}, ...]}

Remote trajectories carry text only; they can be verified and used for
pass-rate statistics but not for gradient updates of the toy policy.
"""

from __future__ import annotations

import itertools
import json
import logging
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

from .policy import DecodeConfig
from .rollout import Completion, RolloutError

log = logging.getLogger(__name__)


class RemoteError(RolloutError):
    """Transport failure that survived all retries."""

    def __init__(self, message: str, attempts: int, received: int = 0):
        super().__init__(message, received=received)
        self.attempts = attempts


class ProtocolError(RolloutError):
    """The server answered with something that is not a valid completion response."""


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5


def _post(endpoint: str, payload: dict, timeout: float) -> bytes:
    req = urllib.request.Request(
        endpoint,
        data=json.dumps(payload).encode("utf-8"),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read()


def _parse_choices(body: bytes) -> list[str]:
    try:
        doc = json.loads(body.decode("utf-8"))
        choices = doc["choices"]
        texts = [c["text"] for c in choices]
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed completion response: {exc}") from exc
    if not all(isinstance(t, str) for t in texts):
        raise ProtocolError("completion text must be a string")
    return texts


def remote_complete(
    endpoint: str,
    prompt_text: str,
    decode: DecodeConfig,
    n: int,
    timeout: float = 60.0,
    max_attempts: int = 3,
    backoff: float = 0.5,
) -> list[str]:
    """Fetch ``n`` completions, re-requesting the remainder after short answers.

    Network failures are retried up to ``max_attempts`` times in total; the
    final error reports how many completions had arrived.
    """
    if n <= 0:
        return []
    decode.validate()
    texts: list[str] = []
    failures = 0
    while len(texts) < n:
        payload = {
            "prompt": prompt_text,
            "n": n - len(texts),
            "temperature": decode.temperature,
            "top_p": decode.top_p,
            "max_tokens": decode.max_tokens,
        }
        try:
            body = _post(endpoint, payload, timeout)
        except (urllib.error.URLError, OSError, TimeoutError) as exc:
            failures += 1
            log.warning("remote attempt %d failed: %s", failures, exc)
            if failures >= max_attempts:
                raise RemoteError(
                    f"gave up after {failures} failed attempts with {len(texts)} of {n} "
                    f"completions received: {exc}",
                    attempts=failures,
                    received=len(texts),
                ) from exc
            time.sleep(backoff * failures)
            continue
        got = _parse_choices(body)
        if not got:
            raise ProtocolError("server returned no choices")
        texts.extend(got[: n - len(texts)])
    return texts


class RemoteBackend:
    """Backend adapter: identical consecutive prompts become one ``n``-request."""

    def __init__(self, config: RemoteConfig):
        self.config = config

    def generate(self, prompts, decode, seeds=None):
        out: list[Completion] = []
        for prompt, run in itertools.groupby(prompts):
            n = sum(1 for _ in run)
            try:
                texts = remote_complete(
                    self.config.endpoint, prompt, decode, n,
                    timeout=self.config.timeout,
                    max_attempts=self.config.max_attempts,
                    backoff=self.config.backoff,
                )
            except RolloutError as exc:
                exc.received += len(out)
                raise
            out.extend(Completion(text=t) for t in texts)
        return out
