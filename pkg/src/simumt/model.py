"""Wait-k transformer: forward, manual backward, incremental inference.

Everything runs in float64 numpy on a single sentence (no batch axis).
The encoder is unidirectional: every layer applies a causal self-attention
mask, so encoder output row i depends only on source positions <= i.  That
makes prefix encodings reusable as the source grows, which is the whole
point for streaming input.

Source-finished convention: the model consumes x ++ [EOS].  While the
source is still streaming, z visible tokens mean attending to encoder
rows [0, z).  Once the source is complete the marker becomes visible too,
so "everything" means z_model = |x| + 1 rows.  ``visible_source_len``
implements that mapping; trace bookkeeping elsewhere stays in real-token
terms.

Decoding maintains explicit states.  ``encode_prefix`` extends an encoder
state with a block of new tokens without touching existing rows, and
``decode_step`` advances one target position against the first ``visible``
encoder rows only (the memory is sliced before any arithmetic, so output
is bitwise independent of later source content).  Both return new state
objects and never mutate their inputs.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .vocab import BOS, EOS

NEG_INF = -np.inf
_LN_EPS = 1e-5
_CKPT_MAGIC = b"SMTCKPT1"


# ---------------------------------------------------------------------------
# configuration and parameter container

@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ffn: int = 128
    tie_decoder_embeddings: bool = True
    joint_vocabulary: bool = True

    def __post_init__(self) -> None:
        if min(self.src_vocab_size, self.tgt_vocab_size) < 5:
            raise ValueError("vocabulary too small (specials alone take 4 ids)")
        if self.d_model < 1 or self.d_ffn < 1 or self.n_heads < 1:
            raise ValueError("model dimensions must be positive")
        if self.n_enc_layers < 1 or self.n_dec_layers < 1:
            raise ValueError("need at least one layer per stack")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"n_heads {self.n_heads} must divide d_model {self.d_model}")
        if self.joint_vocabulary and self.src_vocab_size != self.tgt_vocab_size:
            raise ValueError("joint vocabulary requires equal vocab sizes")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def desk_config(src_vocab_size: int, tgt_vocab_size: int | None = None, **kw) -> ModelConfig:
    """Default small configuration used throughout tests and demos."""
    if tgt_vocab_size is None:
        tgt_vocab_size = src_vocab_size
    return ModelConfig(src_vocab_size=src_vocab_size, tgt_vocab_size=tgt_vocab_size, **kw)


@dataclass
class Parameters:
    """Named tensors plus the config that shaped them.

    Weight tying is structural: with a joint vocabulary there is a single
    "embed" tensor used by both embeddings, and with tied decoder
    embeddings the output projection reuses the target embedding, so no
    separate tensor exists that could drift apart under optimization.
    """

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_params(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())

    @property
    def src_embed_name(self) -> str:
        return "embed" if self.config.joint_vocabulary else "src_embed"

    @property
    def tgt_embed_name(self) -> str:
        return "embed" if self.config.joint_vocabulary else "tgt_embed"

    @property
    def out_proj_name(self) -> str:
        return self.tgt_embed_name if self.config.tie_decoder_embeddings else "out_proj"


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_parameters(config: ModelConfig, seed: int) -> Parameters:
    """Fresh weights; identical (config, seed) gives identical tensors.

    Matrices draw from a scaled uniform distribution; biases start at
    zero, layer-norm gains at one.  Tensors are created in a fixed order
    so draws are reproducible.
    """
    rng = np.random.default_rng(seed)
    d, f = config.d_model, config.d_ffn
    t: dict[str, np.ndarray] = {}

    if config.joint_vocabulary:
        t["embed"] = _glorot(rng, (config.src_vocab_size, d))
    else:
        t["src_embed"] = _glorot(rng, (config.src_vocab_size, d))
        t["tgt_embed"] = _glorot(rng, (config.tgt_vocab_size, d))

    def add_ln(prefix: str) -> None:
        t[prefix + ".g"] = np.ones(d)
        t[prefix + ".b"] = np.zeros(d)

    def add_attn(prefix: str) -> None:
        for w in ("wq", "wk", "wv", "wo"):
            t[f"{prefix}.{w}"] = _glorot(rng, (d, d))
            t[f"{prefix}.{w.replace('w', 'b')}"] = np.zeros(d)

    def add_ffn(prefix: str) -> None:
        t[prefix + ".w1"] = _glorot(rng, (d, f))
        t[prefix + ".b1"] = np.zeros(f)
        t[prefix + ".w2"] = _glorot(rng, (f, d))
        t[prefix + ".b2"] = np.zeros(d)

    for l in range(config.n_enc_layers):
        add_ln(f"enc.{l}.ln1")
        add_attn(f"enc.{l}.attn")
        add_ln(f"enc.{l}.ln2")
        add_ffn(f"enc.{l}.ffn")
    add_ln("enc.final_ln")

    for l in range(config.n_dec_layers):
        add_ln(f"dec.{l}.ln1")
        add_attn(f"dec.{l}.self_attn")
        add_ln(f"dec.{l}.ln2")
        add_attn(f"dec.{l}.cross_attn")
        add_ln(f"dec.{l}.ln3")
        add_ffn(f"dec.{l}.ffn")
    add_ln("dec.final_ln")

    if not config.tie_decoder_embeddings:
        t["out_proj"] = _glorot(rng, (config.tgt_vocab_size, d))
    return Parameters(config=config, tensors=t)


def zero_grads(params: Parameters) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


# ---------------------------------------------------------------------------
# primitives (forward returns a cache consumed by the matching backward)

def sinusoid_rows(start: int, n: int, d: int) -> np.ndarray:
    """Sinusoidal position rows for absolute positions start..start+n-1."""
    pos = np.arange(start, start + n, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d, 2, dtype=np.float64) * (-math.log(10000.0) / d))
    out = np.empty((n, d))
    out[:, 0::2] = np.sin(pos * div)
    out[:, 1::2] = np.cos(pos * div[: d // 2])
    return out


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mean) * inv
    return xhat * g + b, (xhat, inv, g)


def layer_norm_backward(dy: np.ndarray, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    m, d = x.shape
    return x.reshape(m, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, m, dh = x.shape
    return x.transpose(1, 0, 2).reshape(m, h * dh)


def _masked_softmax(scores: np.ndarray) -> np.ndarray:
    """Softmax over the last axis; -inf entries come out exactly 0."""
    mx = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - mx)
    return e / e.sum(axis=-1, keepdims=True)


def causal_mask(m: int, n: int, offset: int = 0) -> np.ndarray:
    """Additive mask letting query row i see key columns <= i + offset."""
    rows = np.arange(m)[:, None] + offset
    cols = np.arange(n)[None, :]
    return np.where(cols <= rows, 0.0, NEG_INF)


def visibility_mask(visible: np.ndarray, n: int) -> np.ndarray:
    """Additive mask letting query row i see key columns < visible[i]."""
    cols = np.arange(n)[None, :]
    return np.where(cols < np.asarray(visible)[:, None], 0.0, NEG_INF)


def attention(params: Parameters, prefix: str, q_in: np.ndarray, kv_in: np.ndarray,
              mask: np.ndarray | None):
    """Multi-head attention of q_in rows over kv_in rows."""
    t = params.tensors
    h = params.config.n_heads
    scale = 1.0 / math.sqrt(params.config.head_dim)
    q = q_in @ t[f"{prefix}.wq"] + t[f"{prefix}.bq"]
    k = kv_in @ t[f"{prefix}.wk"] + t[f"{prefix}.bk"]
    v = kv_in @ t[f"{prefix}.wv"] + t[f"{prefix}.bv"]
    qh, kh, vh = _split_heads(q, h), _split_heads(k, h), _split_heads(v, h)
    scores = qh @ kh.swapaxes(1, 2) * scale
    if mask is not None:
        scores = scores + mask[None, :, :]
    p = _masked_softmax(scores)
    ah = p @ vh
    a = _merge_heads(ah)
    out = a @ t[f"{prefix}.wo"] + t[f"{prefix}.bo"]
    cache = (q_in, kv_in, qh, kh, vh, p, a, prefix)
    return out, cache


def attention_backward(params: Parameters, dout: np.ndarray, cache,
                       grads: dict[str, np.ndarray]):
    q_in, kv_in, qh, kh, vh, p, a, prefix = cache
    t = params.tensors
    h = params.config.n_heads
    scale = 1.0 / math.sqrt(params.config.head_dim)

    grads[f"{prefix}.wo"] += a.T @ dout
    grads[f"{prefix}.bo"] += dout.sum(axis=0)
    da = dout @ t[f"{prefix}.wo"].T
    dah = _split_heads(da, h)

    dp = dah @ vh.swapaxes(1, 2)
    dvh = p.swapaxes(1, 2) @ dah
    dscores = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    dscores *= scale
    dqh = dscores @ kh
    dkh = dscores.swapaxes(1, 2) @ qh

    dq, dk, dv = _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)
    grads[f"{prefix}.wq"] += q_in.T @ dq
    grads[f"{prefix}.bq"] += dq.sum(axis=0)
    grads[f"{prefix}.wk"] += kv_in.T @ dk
    grads[f"{prefix}.bk"] += dk.sum(axis=0)
    grads[f"{prefix}.wv"] += kv_in.T @ dv
    grads[f"{prefix}.bv"] += dv.sum(axis=0)
    dq_in = dq @ t[f"{prefix}.wq"].T
    dkv_in = dk @ t[f"{prefix}.wk"].T + dv @ t[f"{prefix}.wv"].T
    return dq_in, dkv_in


def ffn(params: Parameters, prefix: str, x: np.ndarray):
    t = params.tensors
    h1 = x @ t[f"{prefix}.w1"] + t[f"{prefix}.b1"]
    r = np.maximum(h1, 0.0)
    out = r @ t[f"{prefix}.w2"] + t[f"{prefix}.b2"]
    return out, (x, h1, r, prefix)


def ffn_backward(params: Parameters, dout: np.ndarray, cache,
                 grads: dict[str, np.ndarray]) -> np.ndarray:
    x, h1, r, prefix = cache
    t = params.tensors
    grads[f"{prefix}.w2"] += r.T @ dout
    grads[f"{prefix}.b2"] += dout.sum(axis=0)
    dr = dout @ t[f"{prefix}.w2"].T
    dh1 = dr * (h1 > 0.0)
    grads[f"{prefix}.w1"] += x.T @ dh1
    grads[f"{prefix}.b1"] += dh1.sum(axis=0)
    return dh1 @ t[f"{prefix}.w1"].T


def _embed(params: Parameters, name: str, ids: np.ndarray, start_pos: int) -> np.ndarray:
    d = params.config.d_model
    return params.tensors[name][ids] * math.sqrt(d) + sinusoid_rows(start_pos, len(ids), d)


def _embed_backward(params: Parameters, name: str, ids: np.ndarray,
                    dh: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    np.add.at(grads[name], ids, dh * math.sqrt(params.config.d_model))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    mx = logits.max(axis=-1, keepdims=True)
    z = np.log(np.exp(logits - mx).sum(axis=-1, keepdims=True)) + mx
    return logits - z


# ---------------------------------------------------------------------------
# teacher-forced full forward/backward (training path)

def visible_source_len(z: int, n_real: int) -> int:
    """Map z visible real tokens to encoder rows, exposing the end marker
    only once the whole source is visible."""
    if not 1 <= z <= n_real:
        raise ValueError(f"z={z} outside [1, {n_real}]")
    return z if z < n_real else n_real + 1


def with_source_marker(x: Sequence[int]) -> np.ndarray:
    return np.asarray(list(x) + [EOS], dtype=np.int64)


def encoder_forward(params: Parameters, x_model: np.ndarray):
    """Causal encoder over the full (marker-included) source. Returns
    (memory, cache)."""
    n = len(x_model)
    h = _embed(params, params.src_embed_name, x_model, 0)
    mask = causal_mask(n, n)
    layer_caches = []
    for l in range(params.config.n_enc_layers):
        a_in, ln1c = layer_norm(h, params.tensors[f"enc.{l}.ln1.g"], params.tensors[f"enc.{l}.ln1.b"])
        a_out, attc = attention(params, f"enc.{l}.attn", a_in, a_in, mask)
        h = h + a_out
        f_in, ln2c = layer_norm(h, params.tensors[f"enc.{l}.ln2.g"], params.tensors[f"enc.{l}.ln2.b"])
        f_out, ffnc = ffn(params, f"enc.{l}.ffn", f_in)
        h = h + f_out
        layer_caches.append((ln1c, attc, ln2c, ffnc))
    mem, lnfc = layer_norm(h, params.tensors["enc.final_ln.g"], params.tensors["enc.final_ln.b"])
    return mem, (x_model, layer_caches, lnfc)


def encoder_backward(params: Parameters, cache, dmem: np.ndarray,
                     grads: dict[str, np.ndarray]) -> None:
    x_model, layer_caches, lnfc = cache
    dh, dg, db = layer_norm_backward(dmem, lnfc)
    grads["enc.final_ln.g"] += dg
    grads["enc.final_ln.b"] += db
    for l in reversed(range(params.config.n_enc_layers)):
        ln1c, attc, ln2c, ffnc = layer_caches[l]
        df_in = ffn_backward(params, dh, ffnc, grads)
        dh2, dg, db = layer_norm_backward(df_in, ln2c)
        grads[f"enc.{l}.ln2.g"] += dg
        grads[f"enc.{l}.ln2.b"] += db
        dh = dh + dh2
        dq, dkv = attention_backward(params, dh, attc, grads)
        da_in, dg, db = layer_norm_backward(dq + dkv, ln1c)
        grads[f"enc.{l}.ln1.g"] += dg
        grads[f"enc.{l}.ln1.b"] += db
        dh = dh + da_in
    _embed_backward(params, params.src_embed_name, x_model, dh, grads)


def decoder_forward(params: Parameters, mem: np.ndarray, y_in: np.ndarray,
                    visible_model: np.ndarray):
    """Teacher-forced decoder; row t of the cross mask exposes
    visible_model[t] encoder rows.  Returns (logprobs (m, V), cache)."""
    m = len(y_in)
    h = _embed(params, params.tgt_embed_name, y_in, 0)
    self_mask = causal_mask(m, m)
    cross_mask = visibility_mask(visible_model, len(mem))
    layer_caches = []
    for l in range(params.config.n_dec_layers):
        a_in, ln1c = layer_norm(h, params.tensors[f"dec.{l}.ln1.g"], params.tensors[f"dec.{l}.ln1.b"])
        a_out, selfc = attention(params, f"dec.{l}.self_attn", a_in, a_in, self_mask)
        h = h + a_out
        c_in, ln2c = layer_norm(h, params.tensors[f"dec.{l}.ln2.g"], params.tensors[f"dec.{l}.ln2.b"])
        c_out, crossc = attention(params, f"dec.{l}.cross_attn", c_in, mem, cross_mask)
        h = h + c_out
        f_in, ln3c = layer_norm(h, params.tensors[f"dec.{l}.ln3.g"], params.tensors[f"dec.{l}.ln3.b"])
        f_out, ffnc = ffn(params, f"dec.{l}.ffn", f_in)
        h = h + f_out
        layer_caches.append((ln1c, selfc, ln2c, crossc, ln3c, ffnc))
    hf, lnfc = layer_norm(h, params.tensors["dec.final_ln.g"], params.tensors["dec.final_ln.b"])
    e_out = params.tensors[params.out_proj_name]
    logits = hf @ e_out.T
    logp = log_softmax(logits)
    return logp, (y_in, layer_caches, lnfc, hf, logp)


def decoder_backward(params: Parameters, cache, dlogp: np.ndarray,
                     grads: dict[str, np.ndarray]) -> np.ndarray:
    """Returns dmem (gradient wrt encoder memory)."""
    y_in, layer_caches, lnfc, hf, logp = cache
    dlogits = dlogp - np.exp(logp) * dlogp.sum(axis=-1, keepdims=True)
    e_out = params.tensors[params.out_proj_name]
    grads[params.out_proj_name] += dlogits.T @ hf
    dhf = dlogits @ e_out
    dh, dg, db = layer_norm_backward(dhf, lnfc)
    grads["dec.final_ln.g"] += dg
    grads["dec.final_ln.b"] += db
    dmem = None
    for l in reversed(range(params.config.n_dec_layers)):
        ln1c, selfc, ln2c, crossc, ln3c, ffnc = layer_caches[l]
        df_in = ffn_backward(params, dh, ffnc, grads)
        dh3, dg, db = layer_norm_backward(df_in, ln3c)
        grads[f"dec.{l}.ln3.g"] += dg
        grads[f"dec.{l}.ln3.b"] += db
        dh = dh + dh3
        dq, dkv = attention_backward(params, dh, crossc, grads)
        dmem = dkv if dmem is None else dmem + dkv
        dc_in, dg, db = layer_norm_backward(dq, ln2c)
        grads[f"dec.{l}.ln2.g"] += dg
        grads[f"dec.{l}.ln2.b"] += db
        dh = dh + dc_in
        dq, dkv = attention_backward(params, dh, selfc, grads)
        da_in, dg, db = layer_norm_backward(dq + dkv, ln1c)
        grads[f"dec.{l}.ln1.g"] += dg
        grads[f"dec.{l}.ln1.b"] += db
        dh = dh + da_in
    _embed_backward(params, params.tgt_embed_name, y_in, dh, grads)
    return dmem


def forward_full(params: Parameters, x: Sequence[int], y_in: Sequence[int],
                 path: Sequence[int]):
    """Encoder + decoder over one sentence.

    ``path`` holds z_t in real source tokens (1..|x|), one per target
    position; the marker mapping is applied here.  Returns (logprobs, cache).
    """
    x = np.asarray(x, dtype=np.int64)
    y_in = np.asarray(y_in, dtype=np.int64)
    if len(x) == 0 or len(y_in) == 0:
        raise ValueError("empty sequence")
    if len(path) != len(y_in):
        raise ValueError(f"path length {len(path)} != target length {len(y_in)}")
    zs = np.asarray(path, dtype=np.int64)
    if np.any(zs[1:] < zs[:-1]):
        raise ValueError("path must be non-decreasing")
    visible = np.array([visible_source_len(int(z), len(x)) for z in zs], dtype=np.int64)
    x_model = with_source_marker(x)
    mem, enc_cache = encoder_forward(params, x_model)
    logp, dec_cache = decoder_forward(params, mem, y_in, visible)
    return logp, (enc_cache, dec_cache)


def backward_full(params: Parameters, cache, dlogp: np.ndarray) -> dict[str, np.ndarray]:
    enc_cache, dec_cache = cache
    grads = zero_grads(params)
    dmem = decoder_backward(params, dec_cache, dlogp, grads)
    encoder_backward(params, enc_cache, dmem, grads)
    return grads


def forward_teacher_forced(params: Parameters, x: Sequence[int], y: Sequence[int],
                           path: Sequence[int]) -> np.ndarray:
    """Log-probabilities of the gold targets y under the given read path."""
    y = np.asarray(y, dtype=np.int64)
    y_in = np.concatenate([[BOS], y[:-1]])
    logp, _ = forward_full(params, x, y_in, path)
    return logp[np.arange(len(y)), y]


# ---------------------------------------------------------------------------
# incremental inference states

@dataclass(frozen=True)
class EncoderState:
    """Grows block by block; existing rows are never recomputed differently.

    layer_inputs[l] is the input sequence of encoder layer l (the last
    entry feeds the final layer norm); memory is the normed output.
    """

    layer_inputs: tuple[np.ndarray, ...]
    memory: np.ndarray
    n_tokens: int


def encode_prefix(params: Parameters, new_tokens: Sequence[int],
                  state: EncoderState | None = None) -> EncoderState:
    """Extend (or start) an encoder state with a block of source tokens.

    Returns a new state; ``state`` is unchanged.  Encoding a sequence in
    any block split yields the same rows as encoding it in one call.
    """
    cfg = params.config
    d = cfg.d_model
    new_ids = np.asarray(new_tokens, dtype=np.int64)
    if new_ids.ndim != 1 or len(new_ids) == 0:
        raise ValueError("need at least one new token")
    z0 = 0 if state is None else state.n_tokens
    nn = len(new_ids)

    h = _embed(params, params.src_embed_name, new_ids, z0)
    mask = causal_mask(nn, z0 + nn, offset=z0)
    new_inputs = []
    for l in range(cfg.n_enc_layers):
        prev = state.layer_inputs[l] if state is not None else np.empty((0, d))
        full_in = np.vstack([prev, h])
        new_inputs.append(full_in)
        ln_full, _ = layer_norm(full_in, params.tensors[f"enc.{l}.ln1.g"],
                                params.tensors[f"enc.{l}.ln1.b"])
        a_out, _ = attention(params, f"enc.{l}.attn", ln_full[z0:], ln_full, mask)
        h = h + a_out
        f_in, _ = layer_norm(h, params.tensors[f"enc.{l}.ln2.g"],
                             params.tensors[f"enc.{l}.ln2.b"])
        f_out, _ = ffn(params, f"enc.{l}.ffn", f_in)
        h = h + f_out
    prev = state.layer_inputs[-1] if state is not None else np.empty((0, d))
    new_inputs.append(np.vstack([prev, h]))
    mem_rows, _ = layer_norm(h, params.tensors["enc.final_ln.g"],
                             params.tensors["enc.final_ln.b"])
    prev_mem = state.memory if state is not None else np.empty((0, d))
    return EncoderState(
        layer_inputs=tuple(new_inputs),
        memory=np.vstack([prev_mem, mem_rows]),
        n_tokens=z0 + nn,
    )


@dataclass(frozen=True)
class DecoderState:
    """Self-attention K/V per layer for all target positions so far."""

    self_k: tuple[np.ndarray, ...]
    self_v: tuple[np.ndarray, ...]
    step: int


def empty_decoder_state(params: Parameters) -> DecoderState:
    d = params.config.d_model
    return DecoderState(
        self_k=tuple(np.empty((0, d)) for _ in range(params.config.n_dec_layers)),
        self_v=tuple(np.empty((0, d)) for _ in range(params.config.n_dec_layers)),
        step=0,
    )


def decode_step(params: Parameters, enc_state: EncoderState,
                dec_state: DecoderState | None, prev_token: int, visible: int):
    """One greedy-decoding step.

    ``visible`` counts encoder rows (marker included when exposed) and
    must be in [1, enc_state.n_tokens].  The memory is sliced to that
    prefix before any computation, so the result is bitwise identical no
    matter what lies beyond.  Returns (logprobs (V,), new DecoderState);
    inputs are not mutated.
    """
    cfg = params.config
    if dec_state is None:
        dec_state = empty_decoder_state(params)
    if not 1 <= visible <= enc_state.n_tokens:
        raise ValueError(f"visible={visible} outside [1, {enc_state.n_tokens}]")
    mem_vis = enc_state.memory[:visible]
    t = dec_state.step

    ids = np.asarray([prev_token], dtype=np.int64)
    h = _embed(params, params.tgt_embed_name, ids, t)
    new_k, new_v = [], []
    for l in range(cfg.n_dec_layers):
        a_in, _ = layer_norm(h, params.tensors[f"dec.{l}.ln1.g"],
                             params.tensors[f"dec.{l}.ln1.b"])
        pre = f"dec.{l}.self_attn"
        k_row = a_in @ params.tensors[f"{pre}.wk"] + params.tensors[f"{pre}.bk"]
        v_row = a_in @ params.tensors[f"{pre}.wv"] + params.tensors[f"{pre}.bv"]
        k_all = np.vstack([dec_state.self_k[l], k_row])
        v_all = np.vstack([dec_state.self_v[l], v_row])
        new_k.append(k_all)
        new_v.append(v_all)
        a_out = _attend_precomputed(params, pre, a_in, k_all, v_all)
        h = h + a_out
        c_in, _ = layer_norm(h, params.tensors[f"dec.{l}.ln2.g"],
                             params.tensors[f"dec.{l}.ln2.b"])
        c_out, _ = attention(params, f"dec.{l}.cross_attn", c_in, mem_vis, None)
        h = h + c_out
        f_in, _ = layer_norm(h, params.tensors[f"dec.{l}.ln3.g"],
                             params.tensors[f"dec.{l}.ln3.b"])
        f_out, _ = ffn(params, f"dec.{l}.ffn", f_in)
        h = h + f_out
    hf, _ = layer_norm(h, params.tensors["dec.final_ln.g"],
                       params.tensors["dec.final_ln.b"])
    logits = hf @ params.tensors[params.out_proj_name].T
    logp = log_softmax(logits)[0]
    new_state = DecoderState(self_k=tuple(new_k), self_v=tuple(new_v), step=t + 1)
    return logp, new_state


def _attend_precomputed(params: Parameters, prefix: str, q_in: np.ndarray,
                        k_all: np.ndarray, v_all: np.ndarray) -> np.ndarray:
    """Attention where keys/values are already projected (decoder self-attn
    with cache). No mask: the query is the newest position and sees all."""
    t = params.tensors
    nh = params.config.n_heads
    scale = 1.0 / math.sqrt(params.config.head_dim)
    q = q_in @ t[f"{prefix}.wq"] + t[f"{prefix}.bq"]
    qh, kh, vh = _split_heads(q, nh), _split_heads(k_all, nh), _split_heads(v_all, nh)
    p = _masked_softmax(qh @ kh.swapaxes(1, 2) * scale)
    return _merge_heads(p @ vh) @ t[f"{prefix}.wo"] + t[f"{prefix}.bo"]


# ---------------------------------------------------------------------------
# checkpoint I/O (bit-exact)

def save_checkpoint(params: Parameters, path) -> None:
    """Binary checkpoint: magic, manifest length (u64 LE), JSON manifest
    (names, shapes, byte offsets, config), then flat little-endian float64
    payload.  Loading restores tensors bit-exactly."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in params.tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"config": params.config.to_dict(), "tensors": entries}).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(len(manifest).to_bytes(8, "little"))
        f.write(manifest)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> Parameters:
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    n = int.from_bytes(data[8:16], "little")
    manifest = json.loads(data[16 : 16 + n].decode())
    payload = data[16 + n :]
    config = ModelConfig.from_dict(manifest["config"])
    tensors: dict[str, np.ndarray] = {}
    for e in manifest["tensors"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = e["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        tensors[e["name"]] = arr.reshape(shape).astype(np.float64)
    expect = init_parameters(config, seed=0).tensors
    if set(tensors) != set(expect):
        missing = set(expect) ^ set(tensors)
        raise ValueError(f"checkpoint tensor names do not match config: {sorted(missing)}")
    for name, ref in expect.items():
        if tensors[name].shape != ref.shape:
            raise ValueError(f"tensor {name} has shape {tensors[name].shape}, "
                             f"expected {ref.shape}")
    return Parameters(config=config, tensors=tensors)
