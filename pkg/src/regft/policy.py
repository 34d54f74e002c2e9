"""Toy autoregressive policy: embedding -> flattened window -> tanh -> logits.

Everything is plain numpy with a hand-written backward pass so gradients can
be checked against finite differences. Parameters live in one flat vector;
the named blocks are views into it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import vocab


@dataclass(frozen=True)
class Architecture:
    vocab_size: int = vocab.VOCAB_SIZE
    window: int = 8
    embed_dim: int = 4
    hidden_dim: int = 8

    @property
    def n_params(self) -> int:
        V, W, d, h = self.vocab_size, self.window, self.embed_dim, self.hidden_dim
        return V * d + (W * d) * h + h + h * V + V

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        V, W, d, h = self.vocab_size, self.window, self.embed_dim, self.hidden_dim
        return [
            ("embed", (V, d)),
            ("w_hidden", (W * d, h)),
            ("b_hidden", (h,)),
            ("w_out", (h, V)),
            ("b_out", (V,)),
        ]


@dataclass(frozen=True)
class DecodeConfig:
    temperature: float = 0.7
    top_p: float = 0.9
    max_tokens: int = 256

    def validate(self) -> None:
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


PAPER_DECODE = DecodeConfig(temperature=0.7, top_p=0.9, max_tokens=16384)


@dataclass
class PolicyParams:
    arch: Architecture
    vector: np.ndarray
    version: int = 0

    def __post_init__(self):
        v = np.asarray(self.vector)
        self.vector = v if v.dtype == np.float32 else v.astype(np.float64)
        if self.vector.shape != (self.arch.n_params,):
            raise ValueError(
                f"expected {self.arch.n_params} parameters, got {self.vector.shape}"
            )

    def blocks(self, vector: np.ndarray | None = None) -> dict[str, np.ndarray]:
        v = self.vector if vector is None else vector
        out, pos = {}, 0
        for name, shape in self.arch.shapes():
            size = int(np.prod(shape))
            out[name] = v[pos : pos + size].reshape(shape)
            pos += size
        return out

    def snapshot(self) -> "PolicyParams":
        return PolicyParams(self.arch, self.vector.copy(), self.version)

    def restore(self, snap: "PolicyParams") -> None:
        if snap.arch != self.arch:
            raise ValueError("architecture mismatch")
        self.vector = snap.vector.copy()
        self.version = max(self.version, snap.version) + 1

    def update(self, new_vector: np.ndarray) -> None:
        if not np.all(np.isfinite(new_vector)):
            raise FloatingPointError("non-finite parameters after update")
        self.vector = np.asarray(new_vector, dtype=self.vector.dtype)
        self.version += 1


def snapshot(params: PolicyParams) -> PolicyParams:
    return params.snapshot()


def restore(params: PolicyParams, snap: PolicyParams) -> None:
    params.restore(snap)


def init_params(arch: Architecture, seed: int, scale: float = 0.05, dtype=np.float64) -> PolicyParams:
    """Uniform(-scale, scale) initialization. ``dtype`` float32 trades exactness for speed."""
    rng = np.random.default_rng(seed)
    return PolicyParams(arch, rng.uniform(-scale, scale, size=arch.n_params).astype(dtype))


def zero_params(arch: Architecture) -> PolicyParams:
    return PolicyParams(arch, np.zeros(arch.n_params))


# --- forward / backward ---------------------------------------------------


def _check_tokens(tokens, V: int) -> None:
    arr = np.asarray(tokens)
    if arr.size and (arr.min() < 0 or arr.max() >= V):
        raise ValueError(f"token id out of range [0, {V})")


def context_windows(prompt, completion, window: int) -> np.ndarray:
    """Row t is the last ``window`` tokens before completion[t], left-padded."""
    seq = np.concatenate(
        [np.full(window, vocab.PAD_ID), np.asarray(prompt, dtype=np.int64),
         np.asarray(completion, dtype=np.int64)]
    ).astype(np.int64)
    start = window + len(prompt)
    idx = np.arange(len(completion))[:, None] + np.arange(-window, 0)[None, :] + start
    return seq[idx]


def stack_windows(pairs, window: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Contexts, targets and owning-sequence index for many (prompt, completion) pairs."""
    if not pairs:
        return np.zeros((0, window), np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
    # lay sequences end to end, each behind `window` pads, then gather all windows at once
    parts, rows, tgts, owners = [], [], [], []
    offset = 0
    for k, (prompt, completion) in enumerate(pairs):
        n_p, n_c = len(prompt), len(completion)
        parts += [np.full(window, vocab.PAD_ID, dtype=np.int64), np.asarray(prompt, dtype=np.int64),
                  np.asarray(completion, dtype=np.int64)]
        start = offset + window + n_p
        rows.append(np.arange(start, start + n_c))
        owners.append(np.full(n_c, k, dtype=np.int64))
        offset = start + n_c
    seq = np.concatenate(parts)
    row_end = np.concatenate(rows)
    idx = row_end[:, None] + np.arange(-window, 0)[None, :]
    return seq[idx], seq[row_end], np.concatenate(owners)


def pad_context(context, window: int) -> np.ndarray:
    ctx = list(context)[-window:]
    return np.array([vocab.PAD_ID] * (window - len(ctx)) + ctx, dtype=np.int64)


def _forward(blocks, ctx: np.ndarray):
    emb = np.take(blocks["embed"], ctx, axis=0)  # (T, W, d); faster than fancy indexing
    x = emb.reshape(len(ctx), -1)
    hid = np.tanh(x @ blocks["w_hidden"] + blocks["b_hidden"])
    out = hid @ blocks["w_out"] + blocks["b_out"]
    return out, (x, hid)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def batch_logits(params: PolicyParams, ctx: np.ndarray) -> np.ndarray:
    return _forward(params.blocks(), np.asarray(ctx, dtype=np.int64))[0]


def logits(params: PolicyParams, context) -> np.ndarray:
    """Logits for the next token after ``context`` (last W tokens are used)."""
    ctx = pad_context(context, params.arch.window)
    _check_tokens(ctx, params.arch.vocab_size)
    return batch_logits(params, ctx[None, :])[0]


def token_logprobs(params: PolicyParams, ctx: np.ndarray, targets: np.ndarray) -> np.ndarray:
    lp = log_softmax(batch_logits(params, ctx))
    return lp[np.arange(len(targets)), targets]


def weighted_logprob_grad(
    params: PolicyParams, ctx: np.ndarray, targets: np.ndarray, weights
) -> tuple[np.ndarray, np.ndarray]:
    """Per-token logprobs and the gradient of ``sum(weights * logprobs)``.

    ``weights`` may be a callable mapping the per-token logprobs to weights,
    which lets ratio-dependent losses share a single forward pass.
    """
    arch = params.arch
    blocks = params.blocks()
    ctx = np.asarray(ctx, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    T = len(targets)
    z, (x, hid) = _forward(blocks, ctx)
    lp = log_softmax(z)
    picked = lp[np.arange(T), targets]
    if callable(weights):
        weights = weights(picked)
    weights = np.asarray(weights, dtype=np.float64)

    # d(sum w * log p_target)/dz = w * (onehot - softmax)
    dz = -np.exp(lp) * weights[:, None]
    dz[np.arange(T), targets] += weights
    dz = dz.astype(z.dtype, copy=False)
    grad = np.zeros(arch.n_params, dtype=params.vector.dtype)
    g = params.blocks(grad)
    g["b_out"][:] = dz.sum(axis=0)
    g["w_out"][:] = hid.T @ dz
    dpre = (dz @ blocks["w_out"].T) * (1.0 - hid**2)
    g["b_hidden"][:] = dpre.sum(axis=0)
    g["w_hidden"][:] = x.T @ dpre
    dx = (dpre @ blocks["w_hidden"].T).reshape(T * arch.window, arch.embed_dim)
    # scatter-add over context slots as a one-hot sparse product
    n = dx.shape[0]
    idx_t = np.int32 if n < 2**31 - 1 else np.int64  # int32 indices skip scipy's downcast scan
    onehot = sparse.csr_matrix(
        (np.ones(n, dtype=dx.dtype), ctx.ravel().astype(idx_t), np.arange(n + 1, dtype=idx_t)),
        shape=(n, arch.vocab_size),
    )
    g["embed"][:] = onehot.T @ dx
    return picked, grad


def _completion_arrays(params: PolicyParams, prompt_tokens, completion_tokens):
    if len(completion_tokens) == 0:
        raise ValueError("completion must be non-empty")
    _check_tokens(prompt_tokens, params.arch.vocab_size)
    _check_tokens(completion_tokens, params.arch.vocab_size)
    ctx = context_windows(prompt_tokens, completion_tokens, params.arch.window)
    return ctx, np.asarray(completion_tokens, dtype=np.int64)


def sequence_logprob(params: PolicyParams, prompt_tokens, completion_tokens):
    """Total log-probability (nats) of the completion and its per-token terms."""
    ctx, tgt = _completion_arrays(params, prompt_tokens, completion_tokens)
    per_token = token_logprobs(params, ctx, tgt)
    return float(per_token.sum()), per_token


def grad_sequence_logprob(params: PolicyParams, prompt_tokens, completion_tokens) -> np.ndarray:
    ctx, tgt = _completion_arrays(params, prompt_tokens, completion_tokens)
    return weighted_logprob_grad(params, ctx, tgt, np.ones(len(tgt)))[1]


# --- sampling -------------------------------------------------------------


def nucleus_probs(logit_rows: np.ndarray, temperature: float, top_p: float) -> np.ndarray:
    """Temperature-scaled, nucleus-truncated, renormalized distributions.

    Sorting is by descending probability with ties broken by ascending token
    id; the most likely token always survives.
    """
    p = np.exp(log_softmax(logit_rows / temperature))
    if top_p >= 1.0:
        return p
    desc = -np.sort(-p, axis=-1)
    mass_before = np.cumsum(desc, axis=-1) - desc
    n_keep = (mass_before < top_p).sum(axis=-1, keepdims=True)
    cut = np.take_along_axis(desc, n_keep - 1, axis=-1)
    above = p > cut
    at = p == cut
    # ties at the cut keep the lowest token ids, as a stable sort would
    need = n_keep - above.sum(axis=-1, keepdims=True)
    keep = above | (at & (np.cumsum(at, axis=-1) <= need))
    q = np.where(keep, p, 0.0)
    return q / q.sum(axis=-1, keepdims=True)


@dataclass
class SampleResult:
    tokens: list[int]
    token_logprobs: list[float]
    finished: bool  # ended with EOS (False means truncated at max_tokens)


def _sample_chunk(params: PolicyParams, prompts, seeds, decode: DecodeConfig):
    W, B, T = params.arch.window, len(prompts), decode.max_tokens
    blocks = params.blocks()
    # rolling token buffer for the live rows: the window at step t is buf[:, t : t + W]
    buf = np.full((B, W + T), vocab.PAD_ID, dtype=np.int64)
    buf[:, :W] = np.stack([pad_context(p, W) for p in prompts])
    # one private uniform stream per trajectory -> independent of batching
    uniforms = np.stack([np.random.default_rng(s).random(T) for s in seeds])
    out_tok = np.full((B, T), vocab.PAD_ID, dtype=np.int64)
    out_lp = np.zeros((B, T))
    lengths = np.zeros(B, dtype=np.int64)
    finished = np.zeros(B, dtype=bool)
    live = np.arange(B)  # original rows still generating, in order
    for t in range(T):
        if live.size == 0:
            break
        z = _forward(blocks, buf[:, t : t + W])[0]
        q = nucleus_probs(z, decode.temperature, decode.top_p)
        cdf = np.cumsum(q, axis=-1)
        u = uniforms[:, t][:, None] * cdf[:, -1:]
        tok = np.minimum((cdf <= u).sum(axis=-1), q.shape[1] - 1)
        rows = np.arange(live.size)
        # guard: never pick a zero-probability token due to rounding at the edge
        bad = q[rows, tok] == 0
        if np.any(bad):
            tok[bad] = np.argmax(q[bad], axis=-1)
        out_tok[live, t] = tok
        out_lp[live, t] = log_softmax(z)[rows, tok]
        lengths[live] += 1
        buf[:, W + t] = tok
        done = tok == vocab.EOS_ID
        if np.any(done):
            finished[live[done]] = True
            keep = ~done
            live, buf, uniforms = live[keep], buf[keep], uniforms[keep]
    return [
        SampleResult(out_tok[b, : lengths[b]].tolist(), out_lp[b, : lengths[b]].tolist(), bool(finished[b]))
        for b in range(B)
    ]


def sample_batch(
    params: PolicyParams,
    prompts: list,
    decode: DecodeConfig,
    seeds: list[int],
    chunk_size: int = 512,
    workers: int = 1,
) -> list[SampleResult]:
    """Sample one completion per prompt.

    Work is split into fixed-size chunks so results do not depend on
    ``workers``; each trajectory draws from its own seeded stream.
    """
    decode.validate()
    if len(prompts) != len(seeds):
        raise ValueError("need one seed per prompt")
    for p in prompts:
        _check_tokens(p, params.arch.vocab_size)
    snap = params.snapshot()  # samplers never see a half-updated vector
    chunks = [
        (prompts[i : i + chunk_size], seeds[i : i + chunk_size])
        for i in range(0, len(prompts), chunk_size)
    ]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _sample_chunk(snap, c[0], c[1], decode), chunks))
    else:
        parts = [_sample_chunk(snap, p, s, decode) for p, s in chunks]
    return [r for part in parts for r in part]


def sample(params: PolicyParams, prompt_tokens, decode: DecodeConfig, seed: int) -> SampleResult:
    return sample_batch(params, [list(prompt_tokens)], decode, [seed])[0]


# --- checkpoints ----------------------------------------------------------


def save_params(path, params: PolicyParams) -> None:
    a = params.arch
    with open(path, "wb") as fh:
        np.savez(
            fh,
            vector=params.vector,
            arch=np.array([a.vocab_size, a.window, a.embed_dim, a.hidden_dim], dtype=np.int64),
            version=np.array(params.version, dtype=np.int64),
        )


def load_params(path) -> PolicyParams:
    with np.load(path) as z:
        arch = Architecture(*(int(x) for x in z["arch"]))
        return PolicyParams(arch, z["vector"].copy(), int(z["version"]))
