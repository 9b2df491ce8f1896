"""Autoregressive likelihood models over binary token sequences.

Both models read a sequence shifted right by one position: input ``t`` is
token ``t-1`` and input 0 is a learned start token (index 2).  Output ``t``
is therefore a distribution over token ``t`` that only sees tokens ``< t``.
Tokens are ``0 <-> spin -1`` and ``1 <-> spin +1``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor, no_grad

START = 2
VOCAB = 3


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray
    path_kind: str
    L: int

    def __post_init__(self):
        if len(self.tokens) != self.L * self.L:
            raise ValueError(f"sequence length {len(self.tokens)} != L*L = {self.L * self.L}")


def spins_to_tokens(spins: np.ndarray) -> np.ndarray:
    return (np.asarray(spins) > 0).astype(np.int64)


def tokens_to_spins(tokens: np.ndarray) -> np.ndarray:
    return (2 * np.asarray(tokens, dtype=np.int8) - 1).astype(np.int8)


@dataclass(frozen=True)
class RnnConfig:
    N: int
    hidden: int = 16
    zero_head: bool = True


@dataclass(frozen=True)
class TransformerConfig:
    N: int
    embed: int = 32
    heads: int = 4
    ff: int = 512
    blocks: int = 2
    zero_head: bool = True

    def __post_init__(self):
        if self.embed % self.heads:
            raise ValueError("embedding size must be divisible by the number of heads")


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _as_tokens(seqs) -> np.ndarray:
    if isinstance(seqs, TokenSequence):
        return seqs.tokens[None, :].astype(np.int64)
    if isinstance(seqs, (list, tuple)) and seqs and isinstance(seqs[0], TokenSequence):
        return np.stack([s.tokens for s in seqs]).astype(np.int64)
    t = np.asarray(seqs, dtype=np.int64)
    return t[None, :] if t.ndim == 1 else t


def shifted_inputs(tokens: np.ndarray) -> np.ndarray:
    inp = np.empty_like(tokens)
    inp[:, 0] = START
    inp[:, 1:] = tokens[:, :-1]
    return inp


class ARModel:
    """Shared surface of the two architectures."""

    kind: str
    config: object
    params: ParameterSet

    @property
    def N(self) -> int:
        return self.config.N

    def logits(self, tokens: np.ndarray) -> Tensor:
        raise NotImplementedError

    def _check(self, tokens: np.ndarray) -> np.ndarray:
        tokens = _as_tokens(tokens)
        if tokens.shape[-1] != self.N:
            raise ValueError(f"model expects sequences of length {self.N}, got {tokens.shape[-1]}")
        return tokens

    def token_logprobs(self, tokens) -> Tensor:
        """Differentiable ``log P(token_t | tokens_<t)``, shape (B, N)."""
        tokens = self._check(tokens)
        return ad.pick(ad.log_softmax(self.logits(tokens)), tokens)

    def nll(self, tokens) -> Tensor:
        """Mean over the batch of the negative sequence log-likelihood."""
        lp = self.token_logprobs(tokens)
        return ad.mul(ad.tsum(lp), -1.0 / lp.shape[0])

    def conditional_logprobs(self, seqs, batch_size: int = 4096) -> np.ndarray:
        tokens = self._check(seqs)
        out = np.empty(tokens.shape, dtype=np.float64)
        with no_grad():
            for i in range(0, len(tokens), batch_size):
                out[i:i + batch_size] = self.token_logprobs(tokens[i:i + batch_size]).value
        return out[0] if isinstance(seqs, TokenSequence) else out

    def sequence_logprob(self, seqs, batch_size: int = 4096) -> np.ndarray:
        return self.conditional_logprobs(_as_tokens(seqs), batch_size).sum(axis=-1)

    def generate(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        """Ancestral sampling; returns ``(n, N)`` token arrays."""
        out = np.empty((n, self.N), dtype=np.int64)
        with no_grad():
            state = self._init_state(n)
            prev = np.full(n, START, dtype=np.int64)
            for t in range(self.N):
                logit, state = self._step(prev, t, state)
                p1 = 1.0 / (1.0 + np.exp(logit[:, 0] - logit[:, 1]))
                prev = (rng.random(n) < p1).astype(np.int64)
                out[:, t] = prev
        return out

    def step_logits(self, tokens: np.ndarray) -> np.ndarray:
        """Logits computed with the incremental sampler path, shape (B, N, 2)."""
        tokens = self._check(tokens)
        B = len(tokens)
        inp = shifted_inputs(tokens)
        out = np.empty((B, self.N, 2))
        with no_grad():
            state = self._init_state(B)
            for t in range(self.N):
                out[:, t], state = self._step(inp[:, t], t, state)
        return out


class GRUModel(ARModel):
    """Single-layer unidirectional gated recurrent network."""

    kind = "rnn"

    def __init__(self, config: RnnConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        H = config.hidden
        p = ParameterSet()
        p.add("embed", _uniform(rng, (VOCAB, 3 * H), VOCAB))
        p.add("w_h", _uniform(rng, (H, 3 * H), H))
        p.add("b_h", np.zeros(3 * H))
        p.add("h0", np.zeros(H))
        p.add("w_out", np.zeros((H, 2)) if config.zero_head else _uniform(rng, (H, 2), H))
        p.add("b_out", np.zeros(2))
        self.params = p

    def logits(self, tokens: np.ndarray) -> Tensor:
        p = self.params
        gx = ad.embedding(p["embed"], shifted_inputs(tokens))
        hs = ad.gru_scan(gx, p["h0"], p["w_h"], p["b_h"])
        return ad.linear(hs, p["w_out"], p["b_out"])

    def _init_state(self, n):
        return np.broadcast_to(self.params["h0"].value, (n, self.config.hidden))

    def _step(self, prev, t, h):
        p = self.params
        h = ad.gru_step(p["embed"].value[prev], h, p["w_h"].value, p["b_h"].value)
        return h @ p["w_out"].value + p["b_out"].value, h


def causal_mask(n: int) -> np.ndarray:
    """True where attention is forbidden (strictly future keys)."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def causal_attention(q, k, v, mask=None, return_weights: bool = False):
    """Scaled dot-product attention over the last two axes.

    ``mask`` is broadcast against the (..., Tq, Tk) score array and marks
    forbidden entries; it is applied before the softmax.
    """
    q, k, v = ad.tensor(q), ad.tensor(k), ad.tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != (q.shape[-2], k.shape[-2]):
            raise ValueError(f"mask shape {mask.shape} does not match scores {(q.shape[-2], k.shape[-2])}")
    ctx = ad.attention(q, k, v, mask)
    if not return_weights:
        return ctx
    scores = ad.mul(ad.matmul(q, ad.transpose(k, _swap_last(k.ndim))), 1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        scores = ad.masked_fill(scores, mask, -np.inf)
    return ctx, ad.softmax(scores)


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class TransformerModel(ARModel):
    """Pre-norm decoder-only transformer with learned positional embeddings."""

    kind = "transformer"

    def __init__(self, config: TransformerConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        E, F = config.embed, config.ff
        p = ParameterSet()
        p.add("tok_emb", _uniform(rng, (VOCAB, E), VOCAB))
        p.add("pos_emb", np.zeros((config.N, E)))
        for b in range(config.blocks):
            p.add(f"b{b}.ln1_g", np.ones(E))
            p.add(f"b{b}.ln1_b", np.zeros(E))
            p.add(f"b{b}.w_qkv", _uniform(rng, (E, 3 * E), E))
            p.add(f"b{b}.b_qkv", np.zeros(3 * E))
            p.add(f"b{b}.w_o", _uniform(rng, (E, E), E))
            p.add(f"b{b}.b_o", np.zeros(E))
            p.add(f"b{b}.ln2_g", np.ones(E))
            p.add(f"b{b}.ln2_b", np.zeros(E))
            p.add(f"b{b}.w_ff1", _uniform(rng, (E, F), E))
            p.add(f"b{b}.b_ff1", np.zeros(F))
            p.add(f"b{b}.w_ff2", _uniform(rng, (F, E), F))
            p.add(f"b{b}.b_ff2", np.zeros(E))
        p.add("ln_f_g", np.ones(E))
        p.add("ln_f_b", np.zeros(E))
        p.add("w_out", np.zeros((E, 2)) if config.zero_head else _uniform(rng, (E, 2), E))
        p.add("b_out", np.zeros(2))
        self.params = p
        self._mask = causal_mask(config.N)

    def _split_heads(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        c = self.config
        return ad.transpose(ad.reshape(x, (B, T, c.heads, c.embed // c.heads)), (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        B, _, T, _ = x.shape
        return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B, T, self.config.embed))

    def _attention_block(self, x, b, kv=None):
        p, E = self.params, self.config.embed
        h = ad.layer_norm(x, p[f"b{b}.ln1_g"], p[f"b{b}.ln1_b"])
        qkv = ad.linear(h, p[f"b{b}.w_qkv"], p[f"b{b}.b_qkv"])
        q = self._split_heads(qkv[:, :, :E])
        k = self._split_heads(qkv[:, :, E:2 * E])
        v = self._split_heads(qkv[:, :, 2 * E:])
        if kv is None:
            T = x.shape[1]
            ctx = causal_attention(q, k, v, self._mask[:T, :T])
        else:
            # incremental decoding: the cache only holds past and current keys
            kv[b] = (k.value if kv[b] is None else np.concatenate([kv[b][0], k.value], axis=2),
                     v.value if kv[b] is None else np.concatenate([kv[b][1], v.value], axis=2))
            ctx = causal_attention(q, kv[b][0], kv[b][1])
        return ad.add(x, ad.linear(self._merge_heads(ctx), p[f"b{b}.w_o"], p[f"b{b}.b_o"]))

    def _ff_block(self, x, b):
        p = self.params
        h = ad.layer_norm(x, p[f"b{b}.ln2_g"], p[f"b{b}.ln2_b"])
        h = ad.relu(ad.linear(h, p[f"b{b}.w_ff1"], p[f"b{b}.b_ff1"]))
        return ad.add(x, ad.linear(h, p[f"b{b}.w_ff2"], p[f"b{b}.b_ff2"]))

    def _head(self, x):
        p = self.params
        x = ad.layer_norm(x, p["ln_f_g"], p["ln_f_b"])
        return ad.linear(x, p["w_out"], p["b_out"])

    def logits(self, tokens: np.ndarray) -> Tensor:
        p = self.params
        x = ad.add(ad.embedding(p["tok_emb"], shifted_inputs(tokens)), p["pos_emb"])
        for b in range(self.config.blocks):
            x = self._ff_block(self._attention_block(x, b), b)
        return self._head(x)

    def _init_state(self, n):
        return [None] * self.config.blocks

    def _step(self, prev, t, kv):
        p = self.params
        x = Tensor(p["tok_emb"].value[prev][:, None, :] + p["pos_emb"].value[t])
        for b in range(self.config.blocks):
            x = self._ff_block(self._attention_block(x, b, kv), b)
        return self._head(x).value[:, 0], kv

    def attention_weights(self, tokens: np.ndarray) -> list[np.ndarray]:
        """Per-block attention weights (B, heads, N, N) for inspection."""
        tokens = self._check(tokens)
        p, E = self.params, self.config.embed
        out = []
        with no_grad():
            x = ad.add(ad.embedding(p["tok_emb"], shifted_inputs(tokens)), p["pos_emb"])
            for b in range(self.config.blocks):
                h = ad.layer_norm(x, p[f"b{b}.ln1_g"], p[f"b{b}.ln1_b"])
                qkv = ad.linear(h, p[f"b{b}.w_qkv"], p[f"b{b}.b_qkv"])
                _, w = causal_attention(self._split_heads(qkv[:, :, :E]),
                                        self._split_heads(qkv[:, :, E:2 * E]),
                                        self._split_heads(qkv[:, :, 2 * E:]),
                                        self._mask, return_weights=True)
                out.append(w.value)
                x = self._ff_block(self._attention_block(x, b), b)
        return out


def build_model(kind: str, N: int, seed: int = 0, **overrides) -> ARModel:
    if kind == "rnn":
        return GRUModel(RnnConfig(N=N, **overrides), seed)
    if kind == "transformer":
        return TransformerModel(TransformerConfig(N=N, **overrides), seed)
    raise ValueError(f"unknown model kind {kind!r}")


def sequence_nll(model: ARModel, batch) -> float:
    """Mean over the batch of ``-sum_t log P(token_t | tokens_<t)``."""
    tokens = _as_tokens(batch)
    if len(tokens) == 0:
        raise ValueError("empty batch")
    return float(-model.sequence_logprob(tokens).mean())


def generate(model: ARModel, rng: np.random.Generator, path_kind: str = "zigzag") -> TokenSequence:
    L = int(round(np.sqrt(model.N)))
    return TokenSequence(model.generate(rng, 1)[0], path_kind, L)


# --- checkpoints -----------------------------------------------------------
#
# b"ISPCKPT\n", then a little-endian uint64 header length, the UTF-8 JSON
# header, and the parameter blocks as little-endian float64 in the order
# listed in header["params"] (the model's construction order).

MAGIC = b"ISPCKPT\n"
FORMAT_VERSION = 1


def save_checkpoint(model: ARModel, path, epoch: int = 0, extra: dict | None = None) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": model.kind,
        "config": asdict(model.config),
        "seed": model.seed,
        "epoch": epoch,
        "params": [{"name": k, "shape": list(t.shape)} for k, t in model.params.items()],
    }
    if extra:
        header["extra"] = extra
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for _, t in model.params.items():
            fh.write(np.ascontiguousarray(t.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ARModel, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(MAGIC)
    (n,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off:off + n].decode())
    off += n
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['format_version']}")
    cfg = dict(header["config"])
    N = cfg.pop("N")
    model = build_model(header["architecture"], N, header["seed"], **cfg)
    snap = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        snap[entry["name"]] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after parameter blocks")
    model.params.restore(snap)
    return model, header
