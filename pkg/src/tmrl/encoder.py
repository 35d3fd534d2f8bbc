"""Toy contextual text encoder with LoRA adapters and a temporal projector.

Architecture (row-vector convention, ``x @ W``)::

    H0 = E[token] + P[position]
    for each layer:  c  = masked mean of H over tokens
                     Z  = H @ W + c @ U + b          (W, U are LoRA targets)
                     H  = LayerNorm(H + act(Z))

Every forward pass keeps a cache so that :meth:`EncoderPass.backward` can
return exact gradients for the adapter matrices and, on request, for the
hidden-state inputs of the temporal projector.
"""

from __future__ import annotations

import enum
import json
import re
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .binio import Reader, Writer, read_container, write_container
from .errors import ConfigError, DimensionError, EmptyTemporalError, InputFormatError
from .numkit import F32LE

PAD, CLS, EOS = 0, 1, 2
N_SPECIAL = 3
_TOKEN = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class PoolingMode(str, enum.Enum):
    CLS = "cls"
    MEAN = "mean"
    EOS = "eos"


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    char_offsets: tuple[tuple[int, int], ...]
    cls_present: bool = False
    eos_present: bool = False
    text: str = ""

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise InputFormatError("token sequence must be non-empty")
        if len(self.tokens) != len(self.char_offsets):
            raise InputFormatError("one character range per token required")
        prev = 0
        for a, b in self.char_offsets:
            if a < prev or b < a:
                raise InputFormatError("char_offsets must be monotone and non-overlapping")
            prev = b

    def __len__(self) -> int:
        return len(self.tokens)


class Tokenizer:
    """Whitespace/punctuation splitter over a hash-bucketed vocabulary."""

    def __init__(self, vocab_size: int = 1024, max_len: int = 64, add_cls: bool = True, add_eos: bool = True):
        if vocab_size <= N_SPECIAL:
            raise ConfigError("vocab_size must exceed the number of special tokens")
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.add_cls = add_cls
        self.add_eos = add_eos

    def token_id(self, word: str) -> int:
        return N_SPECIAL + zlib.crc32(word.lower().encode("utf-8")) % (self.vocab_size - N_SPECIAL)

    def __call__(self, text: str) -> TokenSequence:
        budget = self.max_len - self.add_cls - self.add_eos
        words = list(_TOKEN.finditer(text))[: max(budget, 0)]
        tokens, offsets = [], []
        if self.add_cls:
            tokens.append(CLS)
            offsets.append((0, 0))
        for m in words:
            tokens.append(self.token_id(m.group()))
            offsets.append((m.start(), m.end()))
        if self.add_eos:
            end = offsets[-1][1] if offsets else 0
            tokens.append(EOS)
            offsets.append((end, end))
        return TokenSequence(tuple(tokens), tuple(offsets), self.add_cls, self.add_eos, text)


# --------------------------------------------------------------------------
# activations and layer norm


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "gelu":
        return 0.5 * z * (1.0 + np.tanh(0.7978845608028654 * (z + 0.044715 * z**3)))
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    raise ConfigError(f"unknown activation {kind!r}")


def _act_grad(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "gelu":
        k = 0.7978845608028654
        inner = k * (z + 0.044715 * z**3)
        t = np.tanh(inner)
        return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t**2) * k * (1.0 + 3 * 0.044715 * z**2)
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "identity":
        return np.ones_like(z)
    raise ConfigError(f"unknown activation {kind!r}")


def _ln_forward(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    return g * xhat + b, (xhat, rstd)


def _ln_backward(dy, g, cache):
    xhat, rstd = cache
    dxhat = dy * g
    return rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 1024
    d: int = 64
    max_len: int = 64
    n_layers: int = 2
    activation: str = "gelu"
    layer_norm: bool = True
    ln_eps: float = 1e-5
    pooling: PoolingMode = PoolingMode.MEAN
    pos_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "pooling", PoolingMode(self.pooling))
        _act(self.activation, np.zeros(1))
        if min(self.vocab_size, self.d, self.max_len, self.n_layers) < 1:
            raise ConfigError("encoder dimensions must be positive")


def lora_targets(cfg: EncoderConfig) -> list[str]:
    """Every linear map in the encoder."""
    return [f"layers.{i}.{w}" for i in range(cfg.n_layers) for w in ("W", "U")]


@dataclass
class EncoderParams:
    config: EncoderConfig
    arrays: dict[str, np.ndarray]

    @classmethod
    def init(cls, config: EncoderConfig, seed: int = 0) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        d = config.d
        arrays = {
            "embed": rng.standard_normal((config.vocab_size, d)),
            "pos": config.pos_scale * rng.standard_normal((config.max_len, d)),
        }
        bound = 1.0 / np.sqrt(d)
        for i in range(config.n_layers):
            arrays[f"layers.{i}.W"] = rng.uniform(-bound, bound, (d, d))
            arrays[f"layers.{i}.U"] = rng.uniform(-bound, bound, (d, d))
            arrays[f"layers.{i}.b"] = np.zeros(d)
            arrays[f"layers.{i}.ln_g"] = np.ones(d)
            arrays[f"layers.{i}.ln_b"] = np.zeros(d)
        return cls(config, arrays)

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


@dataclass
class LoRAAdapter:
    target: str
    A: np.ndarray
    B: np.ndarray
    scale: float = 4.0
    dropout: float = 0.0

    def __post_init__(self):
        if self.A.ndim != 2 or self.B.ndim != 2 or self.A.shape[1] != self.B.shape[0]:
            raise DimensionError(f"adapter {self.target}: A {self.A.shape} and B {self.B.shape} do not compose")
        if self.rank < 1:
            raise ConfigError("adapter rank must be >= 1")
        if not np.isfinite(self.scale):
            raise ConfigError("adapter scale must be finite")

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @classmethod
    def init(cls, target: str, d_in: int, d_out: int, rank: int = 4, scale: float = 4.0,
             dropout: float = 0.0, rng: np.random.Generator | None = None) -> "LoRAAdapter":
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(d_in)
        return cls(target, rng.uniform(-bound, bound, (d_in, rank)), np.zeros((rank, d_out)), scale, dropout)

    def delta(self) -> np.ndarray:
        return self.scale * (self.A @ self.B)


def init_adapters(config: EncoderConfig, rank: int = 4, scale: float = 4.0, dropout: float = 0.1,
                  seed: int = 0) -> dict[str, LoRAAdapter]:
    rng = np.random.default_rng(seed)
    return {t: LoRAAdapter.init(t, config.d, config.d, rank, scale, dropout, rng) for t in lora_targets(config)}


def lora_forward(W, adapter: LoRAAdapter, x, train: bool = False, rng: np.random.Generator | None = None):
    """``x @ W + scale * (x @ A) @ B``; dropout on the adapter input in training mode."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.shape[0] != adapter.A.shape[0] or W.shape[1] != adapter.B.shape[1] or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"shape mismatch: W {W.shape}, A {adapter.A.shape}, B {adapter.B.shape}, x {x.shape}")
    xa = x
    if train and adapter.dropout > 0:
        rng = rng if rng is not None else np.random.default_rng()
        keep = rng.random(x.shape) >= adapter.dropout
        xa = x * keep / (1.0 - adapter.dropout)
    return x @ W + adapter.scale * ((xa @ adapter.A) @ adapter.B)


def lora_merge(W, adapter: LoRAAdapter) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (adapter.A.shape[0], adapter.B.shape[1]):
        raise DimensionError(f"cannot merge adapter {adapter.A.shape}x{adapter.B.shape} into W {W.shape}")
    return W + adapter.delta()


@dataclass
class TemporalProjector:
    """Two-layer map from hidden states to the ``t``-dim temporal space."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    ln_g: np.ndarray
    ln_b: np.ndarray
    activation: str = "gelu"
    layer_norm: bool = True
    ln_eps: float = 1e-5

    @property
    def t(self) -> int:
        return self.W2.shape[1]

    @classmethod
    def init(cls, d: int, t: int, d_hidden: int | None = None, activation: str = "gelu",
             layer_norm: bool = True, ln_eps: float = 1e-5, seed: int = 0) -> "TemporalProjector":
        d_hidden = d if d_hidden is None else d_hidden
        rng = np.random.default_rng(seed)
        b_in, b_out = 1.0 / np.sqrt(d), 1.0 / np.sqrt(d_hidden)
        return cls(
            rng.uniform(-b_in, b_in, (d, d_hidden)), rng.uniform(-b_in, b_in, d_hidden),
            rng.uniform(-b_out, b_out, (d_hidden, t)), rng.uniform(-b_out, b_out, t),
            np.ones(d_hidden), np.zeros(d_hidden), activation, layer_norm, ln_eps,
        )

    @classmethod
    def for_encoder(cls, config: EncoderConfig, t: int, seed: int = 0) -> "TemporalProjector":
        return cls.init(config.d, t, config.d, config.activation, config.layer_norm, config.ln_eps, seed)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2, "ln_g": self.ln_g, "ln_b": self.ln_b}

    def forward(self, H: np.ndarray):
        z1 = H @ self.W1 + self.b1
        a1 = _act(self.activation, z1)
        ln_cache = None
        if self.layer_norm:
            a1n, ln_cache = _ln_forward(a1, self.ln_g, self.ln_b, self.ln_eps)
        else:
            a1n = a1
        out = a1n @ self.W2 + self.b2
        return out, (H, z1, a1, a1n, ln_cache)

    def backward(self, dout: np.ndarray, cache) -> tuple[dict[str, np.ndarray], np.ndarray]:
        H, z1, a1, a1n, ln_cache = cache
        grads = {"W2": a1n.T @ dout, "b2": dout.sum(axis=0)}
        da1n = dout @ self.W2.T
        if self.layer_norm:
            xhat, _ = ln_cache
            grads["ln_g"] = (da1n * xhat).sum(axis=0)
            grads["ln_b"] = da1n.sum(axis=0)
            da1 = _ln_backward(da1n, self.ln_g, ln_cache)
        else:
            grads["ln_g"] = np.zeros_like(self.ln_g)
            grads["ln_b"] = np.zeros_like(self.ln_b)
            da1 = da1n
        dz1 = da1 * _act_grad(self.activation, z1)
        grads["W1"] = H.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        return grads, dz1 @ self.W1.T

    def __call__(self, H: np.ndarray) -> np.ndarray:
        return self.forward(np.atleast_2d(H))[0]


def project_temporal(projector: TemporalProjector, temporal_rows) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(temporal_rows, dtype=np.float64))
    if rows.shape[0] == 0:
        raise ValueError("project_temporal needs at least one row")
    return projector(rows).mean(axis=0)


# --------------------------------------------------------------------------
# forward / backward


def _pack(seqs: Sequence[TokenSequence], max_len: int) -> tuple[np.ndarray, np.ndarray]:
    L = max(len(s) for s in seqs)
    if L > max_len:
        raise InputFormatError(f"sequence of length {L} exceeds max_len={max_len}")
    tok = np.full((len(seqs), L), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        tok[i, : len(s)] = s.tokens
        mask[i, : len(s)] = np.asarray(s.tokens) != PAD
    return tok, mask


class EncoderPass:
    """One batched forward pass with everything the backward pass needs."""

    def __init__(self, params: EncoderParams, adapters: dict[str, LoRAAdapter] | None,
                 seqs: Sequence[TokenSequence], train: bool = False, rng: np.random.Generator | None = None):
        cfg = params.config
        self.params = params
        self.adapters = adapters or {}
        self.seqs = list(seqs)
        tok, mask = _pack(self.seqs, cfg.max_len)
        if tok.size and tok.max() >= cfg.vocab_size:
            raise InputFormatError("token id outside vocabulary")
        self.mask = mask
        self.count = np.maximum(mask.sum(axis=1), 1).astype(np.float64)
        m = mask[..., None].astype(np.float64)
        H = params["embed"][tok] + params["pos"][None, : tok.shape[1]]
        self.layers = []
        for i in range(cfg.n_layers):
            W, U = params[f"layers.{i}.W"], params[f"layers.{i}.U"]
            c = (H * m).sum(axis=1) / self.count[:, None]
            cache = {"H": H, "c": c}
            Z = H @ W + (c @ U)[:, None, :] + params[f"layers.{i}.b"]
            for name, inp, key in ((f"layers.{i}.W", H, "W"), (f"layers.{i}.U", c, "U")):
                ad = self.adapters.get(name)
                if ad is None:
                    continue
                keep = None
                xa = inp
                if train and ad.dropout > 0:
                    gen = rng if rng is not None else np.random.default_rng()
                    keep = (gen.random(inp.shape) >= ad.dropout) / (1.0 - ad.dropout)
                    xa = inp * keep
                u = xa @ ad.A
                delta = ad.scale * (u @ ad.B)
                Z = Z + (delta if key == "W" else delta[:, None, :])
                cache[key] = (xa, keep, u)
            R = H + _act(cfg.activation, Z)
            if cfg.layer_norm:
                H, ln_cache = _ln_forward(R, params[f"layers.{i}.ln_g"], params[f"layers.{i}.ln_b"], cfg.ln_eps)
            else:
                H, ln_cache = R, None
            cache.update(Z=Z, ln=ln_cache)
            self.layers.append(cache)
        self.hidden = H

    def pooled(self, mode: PoolingMode | str | None = None) -> np.ndarray:
        mode = PoolingMode(mode or self.params.config.pooling)
        out = np.empty((len(self.seqs), self.hidden.shape[2]))
        for i, s in enumerate(self.seqs):
            out[i] = pool(self.hidden[i, : len(s)], mode, s)
        return out

    def pool_backward(self, dpooled: np.ndarray, mode: PoolingMode | str | None = None) -> np.ndarray:
        mode = PoolingMode(mode or self.params.config.pooling)
        dH = np.zeros_like(self.hidden)
        for i, s in enumerate(self.seqs):
            if mode is PoolingMode.CLS:
                dH[i, 0] = dpooled[i]
            elif mode is PoolingMode.EOS:
                dH[i, _last_real(s)] = dpooled[i]
            else:
                rows = self.mask[i]
                dH[i, rows] = dpooled[i] / rows.sum()
        return dH

    def backward(self, dH: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the adapter matrices given d(loss)/d(final hidden)."""
        cfg = self.params.config
        p = self.params
        m = self.mask[..., None].astype(np.float64)
        grads: dict[str, np.ndarray] = {}
        for i in reversed(range(cfg.n_layers)):
            cache = self.layers[i]
            if cfg.layer_norm:
                dR = _ln_backward(dH, p[f"layers.{i}.ln_g"], cache["ln"])
            else:
                dR = dH
            dZ = dR * _act_grad(cfg.activation, cache["Z"])
            dX = dR + dZ @ p[f"layers.{i}.W"].T
            dZc = dZ.sum(axis=1)
            dc = dZc @ p[f"layers.{i}.U"].T
            for name, key, dout in ((f"layers.{i}.W", "W", dZ), (f"layers.{i}.U", "U", dZc)):
                ad = self.adapters.get(name)
                if ad is None:
                    continue
                xa, keep, u = cache[key]
                r = u.shape[-1]
                grads[f"{name}.B"] = ad.scale * (u.reshape(-1, r).T @ dout.reshape(-1, dout.shape[-1]))
                du = ad.scale * (dout @ ad.B.T)
                grads[f"{name}.A"] = xa.reshape(-1, xa.shape[-1]).T @ du.reshape(-1, r)
                dxa = du @ ad.A.T
                if keep is not None:
                    dxa = dxa * keep
                if key == "W":
                    dX = dX + dxa
                else:
                    dc = dc + dxa
            dX = dX + dc[:, None, :] * m / self.count[:, None, None]
            dH = dX
        return grads


def _last_real(seq: TokenSequence) -> int:
    idx = [i for i, t in enumerate(seq.tokens) if t != PAD]
    return idx[-1]


def encode(params: EncoderParams, adapters: dict[str, LoRAAdapter] | None, seq: TokenSequence) -> np.ndarray:
    """Hidden states (L x d) of a single sequence in evaluation mode."""
    return EncoderPass(params, adapters, [seq]).hidden[0, : len(seq)].copy()


def pool(hidden: np.ndarray, mode: PoolingMode | str, seq: TokenSequence) -> np.ndarray:
    mode = PoolingMode(mode)
    hidden = np.asarray(hidden, dtype=np.float64)
    if mode is PoolingMode.CLS:
        if not seq.cls_present:
            raise ConfigError("CLS pooling requested but sequence has no [CLS] token")
        return hidden[0].copy()
    if mode is PoolingMode.EOS:
        if not seq.eos_present:
            raise ConfigError("EOS pooling requested but sequence has no end-of-sequence token")
        return hidden[_last_real(seq)].copy()
    rows = np.asarray(seq.tokens[: hidden.shape[0]]) != PAD
    return hidden[rows].mean(axis=0)


def _range_of(span) -> tuple[int, int]:
    if hasattr(span, "start") and hasattr(span, "end"):
        return int(span.start), int(span.end)
    a, b = span
    return int(a), int(b)


def temporal_token_indices(seq: TokenSequence, spans: Iterable, mode: PoolingMode | str) -> list[int]:
    """Token rows whose character range intersects a span (CLS first under CLS pooling)."""
    ranges = [_range_of(s) for s in spans]
    n = len(seq.text)
    for a, b in ranges:
        if seq.text and not 0 <= a <= b <= n:
            raise InputFormatError(f"span [{a}, {b}) outside text of length {n}")
    idx = []
    for i, (a, b) in enumerate(seq.char_offsets):
        if seq.tokens[i] in (PAD, CLS, EOS):
            continue
        if any(a < e and s < b for s, e in ranges):
            idx.append(i)
    if PoolingMode(mode) is PoolingMode.CLS and seq.cls_present:
        idx = [0] + idx
    if not idx:
        raise EmptyTemporalError("no token intersects the temporal spans")
    return idx


def select_temporal_tokens(hidden: np.ndarray, spans: Iterable, seq: TokenSequence,
                           mode: PoolingMode | str) -> np.ndarray:
    return np.asarray(hidden)[temporal_token_indices(seq, spans, mode)]


# --------------------------------------------------------------------------
# model container


@dataclass
class TMRLModel:
    """Frozen base encoder, trainable adapters and temporal projector."""

    params: EncoderParams
    adapters: dict[str, LoRAAdapter] = field(default_factory=dict)
    projector: TemporalProjector | None = None
    tokenizer: Tokenizer | None = None

    def __post_init__(self):
        if self.tokenizer is None:
            cfg = self.params.config
            self.tokenizer = Tokenizer(cfg.vocab_size, cfg.max_len)

    @property
    def config(self) -> EncoderConfig:
        return self.params.config

    @classmethod
    def create(cls, config: EncoderConfig, t: int | None, rank: int = 4, scale: float = 4.0,
               dropout: float = 0.1, seed: int = 0) -> "TMRLModel":
        params = EncoderParams.init(config, seed)
        adapters = init_adapters(config, rank, scale, dropout, seed + 1) if rank > 0 else {}
        projector = TemporalProjector.for_encoder(config, t, seed + 2) if t else None
        return cls(params, adapters, projector)

    def trainable(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array, keyed by stable names."""
        out = {}
        for name in sorted(self.adapters):
            out[f"{name}.A"] = self.adapters[name].A
            out[f"{name}.B"] = self.adapters[name].B
        if self.projector is not None:
            for k, v in self.projector.arrays().items():
                out[f"projector.{k}"] = v
        return out

    def copy(self) -> "TMRLModel":
        adapters = {k: LoRAAdapter(a.target, a.A.copy(), a.B.copy(), a.scale, a.dropout) for k, a in self.adapters.items()}
        proj = None
        if self.projector is not None:
            pr = self.projector
            proj = TemporalProjector(pr.W1.copy(), pr.b1.copy(), pr.W2.copy(), pr.b2.copy(), pr.ln_g.copy(),
                                     pr.ln_b.copy(), pr.activation, pr.layer_norm, pr.ln_eps)
        return TMRLModel(self.params.copy(), adapters, proj, self.tokenizer)

    def merged(self) -> "TMRLModel":
        """Adapters folded into the base weights; projector dropped."""
        params = self.params.copy()
        for name, ad in self.adapters.items():
            params.arrays[name] = lora_merge(params.arrays[name], ad)
        return TMRLModel(params, {}, None, self.tokenizer)

    def tokenize(self, texts: Iterable[str]) -> list[TokenSequence]:
        return [self.tokenizer(t) for t in texts]

    def embed(self, texts: Sequence[str], batch_size: int = 256) -> np.ndarray:
        """Pooled evaluation-mode embeddings."""
        out = []
        for i in range(0, len(texts), batch_size):
            seqs = self.tokenize(texts[i:i + batch_size])
            out.append(EncoderPass(self.params, self.adapters, seqs).pooled())
        return np.vstack(out) if out else np.zeros((0, self.config.d))


# --------------------------------------------------------------------------
# checkpoint container

CHECKPOINT_MAGIC = b"TMRL"
CHECKPOINT_VERSION = 1
_POOL_CODE = {PoolingMode.CLS: 0, PoolingMode.MEAN: 1, PoolingMode.EOS: 2}


def _blocks(model: TMRLModel) -> dict[str, np.ndarray]:
    blocks = {f"base.{k}": v for k, v in sorted(model.params.arrays.items())}
    for name in sorted(model.adapters):
        blocks[f"lora.{name}.A"] = model.adapters[name].A
        blocks[f"lora.{name}.B"] = model.adapters[name].B
    if model.projector is not None:
        for k, v in model.projector.arrays().items():
            blocks[f"projector.{k}"] = v
    return blocks


def save_checkpoint(model: TMRLModel, path) -> bytes:
    cfg = model.config
    meta = {
        "n_layers": cfg.n_layers, "activation": cfg.activation, "layer_norm": cfg.layer_norm,
        "ln_eps": cfg.ln_eps, "pos_scale": cfg.pos_scale,
        "adapters": {k: {"scale": a.scale, "dropout": a.dropout} for k, a in sorted(model.adapters.items())},
        "projector": None if model.projector is None else {
            "activation": model.projector.activation, "layer_norm": model.projector.layer_norm,
            "ln_eps": model.projector.ln_eps},
        "tokenizer": {"add_cls": model.tokenizer.add_cls, "add_eos": model.tokenizer.add_eos},
    }
    w = Writer()
    w.pack("IIIB", cfg.vocab_size, cfg.d, cfg.max_len, _POOL_CODE[cfg.pooling])
    w.string(json.dumps(meta, sort_keys=True))
    blocks = _blocks(model)
    w.pack("I", len(blocks))
    for name, arr in blocks.items():
        w.string(name)
        w.pack("B", arr.ndim)
        w.pack("I" * arr.ndim, *arr.shape)
        w.raw(np.ascontiguousarray(arr, dtype=F32LE).tobytes())
    return write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, w.payload())


def load_checkpoint(path) -> TMRLModel:
    r, _ = read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    vocab, d, max_len, pcode = r.unpack("IIIB")
    meta = json.loads(r.string())
    pooling = {v: k for k, v in _POOL_CODE.items()}.get(pcode)
    if pooling is None:
        raise InputFormatError(f"{path}: unknown pooling code {pcode}")
    (n_blocks,) = r.unpack("I")
    blocks = {}
    for _ in range(n_blocks):
        name = r.string()
        (ndim,) = r.unpack("B")
        shape = r.unpack("I" * ndim)
        n = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(r.take(4 * n), dtype=F32LE).reshape(shape).astype(np.float64)
    if not r.done():
        raise InputFormatError(f"{path}: unparsed bytes after parameter blocks")
    cfg = EncoderConfig(vocab, d, max_len, meta["n_layers"], meta["activation"], meta["layer_norm"],
                        meta["ln_eps"], pooling, meta["pos_scale"])
    params = EncoderParams(cfg, {k[5:]: v for k, v in blocks.items() if k.startswith("base.")})
    adapters = {
        name: LoRAAdapter(name, blocks[f"lora.{name}.A"], blocks[f"lora.{name}.B"], spec["scale"], spec["dropout"])
        for name, spec in meta["adapters"].items()
    }
    projector = None
    if meta["projector"] is not None:
        pm = meta["projector"]
        g = lambda k: blocks[f"projector.{k}"]  # noqa: E731
        projector = TemporalProjector(g("W1"), g("b1"), g("W2"), g("b2"), g("ln_g"), g("ln_b"),
                                      pm["activation"], pm["layer_norm"], pm["ln_eps"])
    tok = Tokenizer(vocab, max_len, meta["tokenizer"]["add_cls"], meta["tokenizer"]["add_eos"])
    return TMRLModel(params, adapters, projector, tok)
