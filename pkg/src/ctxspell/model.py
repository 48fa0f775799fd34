"""Non-autoregressive correction network.

Text encoder, bias encoder, acoustic adapter and tagging decoder.  The
acoustic variants add an external cross-attention over adapted frames,
either inside every text-encoder layer ("ea") or inside every decoder layer
("da").  Its residual branch is scaled by the incorporation ratio ``r``::

    x = x0 + r * dropout(acoustic_attn(norm(x0)))

so with ``r == 0`` an acoustic model computes exactly what the text-only
network with the same shared weights computes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .tagging import N_TAGS
from .textcore import DEFAULT_CHUNK, TokenizedText

VARIANTS = ("text", "ea", "da")
PAD, UNK, PHRASE_START = "<pad>", "<unk>", "<phr>"
SPECIALS = (PAD, UNK, PHRASE_START)

# Large negative logit for padded bias columns; finite so logits stay checkable.
PAD_LOGIT = -1e9

CHECKPOINT_MAGIC = b"CSCK"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    variant: str = "text"
    n_layers_text: int = 2
    n_layers_bias: int = 1
    n_layers_dec: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    d_acoustic_in: int = 32
    d_adapter_hidden: int = 64
    adapter_norm: bool = False
    dropout: float = 0.1
    s_kmax: int = 2
    chunk: int = DEFAULT_CHUNK
    vocab: list[str] = field(default_factory=lambda: list(SPECIALS))

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        for name in ("n_layers_text", "n_layers_bias", "n_layers_dec", "d_model", "n_heads", "d_ff", "s_kmax"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if tuple(self.vocab[: len(SPECIALS)]) != SPECIALS:
            self.vocab = list(SPECIALS) + [t for t in self.vocab if t not in SPECIALS]

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_variant(self, variant: str) -> "ModelConfig":
        return replace(self, variant=variant, vocab=list(self.vocab))


PRESETS: dict[str, dict] = {
    # 6 blocks per stack, 8 heads, 2048-wide feedforward; the acoustic adapter
    # is a 2048-wide feedforward followed by layer normalization.  The width
    # of the teacher is not given, 512 matches the audio encoder output.
    "paper-teacher": dict(
        n_layers_text=6, n_layers_bias=6, n_layers_dec=6, d_model=512, n_heads=8, d_ff=2048,
        d_acoustic_in=512, d_adapter_hidden=2048, adapter_norm=True,
    ),
    "paper-student": dict(
        n_layers_text=3, n_layers_bias=3, n_layers_dec=3, d_model=192, n_heads=4, d_ff=768,
        d_acoustic_in=512, d_adapter_hidden=512,
    ),
    "desk": dict(
        n_layers_text=2, n_layers_bias=1, n_layers_dec=2, d_model=64, n_heads=4, d_ff=128,
        d_acoustic_in=32, d_adapter_hidden=64,
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}")
    return ModelConfig(**{**PRESETS[name], **overrides})


def is_new_component(name: str) -> bool:
    """True for parameters that only acoustic variants have."""
    return name.startswith("adapter.") or ".acoustic_" in name


def sinusoid_positions(n: int, d: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return pe.to(dtype)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.last_probs: torch.Tensor | None = None
        self.keep_probs = False

    def forward(self, x: torch.Tensor, memory: torch.Tensor, allowed: torch.Tensor | None = None) -> torch.Tensor:
        """``allowed`` is a boolean [B, Lq, Lk] (or broadcastable) mask of visible keys."""
        b, lq, d = x.shape
        lk = memory.shape[1]
        h, dh = self.n_heads, self.d_head
        q = self.q(x).view(b, lq, h, dh).transpose(1, 2)
        k = self.k(memory).view(b, lk, h, dh).transpose(1, 2)
        v = self.v(memory).view(b, lk, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        if allowed is not None:
            scores = scores.masked_fill(~allowed[:, None], float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        if self.keep_probs:
            self.last_probs = probs.detach()
        ctx = (probs @ v).transpose(1, 2).reshape(b, lq, d)
        return self.out(ctx)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.drop(F.relu(self.fc1(x))))


class AcousticAdapter(nn.Module):
    """Per-frame linear -> ReLU -> dropout -> linear (optionally layer-normed)."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, dropout: float, norm: bool = False):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_hidden)
        self.fc2 = nn.Linear(d_hidden, d_out)
        self.drop = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(d_out) if norm else None

    def forward(self, frames):
        y = self.fc2(self.drop(F.relu(self.fc1(frames))))
        return self.norm(y) if self.norm is not None else y


class AcousticAttention(nn.Module):
    """Residual acoustic cross-attention whose branch is scaled by ``r``."""

    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads)
        self.drop = nn.Dropout(dropout)

    def forward(self, x0, frames, allowed, r):
        return x0 + r * self.drop(self.attn(self.norm(x0), frames, allowed))


def _scale(r, x: torch.Tensor):
    if isinstance(r, torch.Tensor) and r.dim() == 1:
        return r.to(x.dtype)[:, None, None]
    return r


class TextEncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, acoustic: bool):
        super().__init__()
        d = cfg.d_model
        self.self_norm = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, cfg.n_heads)
        self.acoustic_attn = AcousticAttention(d, cfg.n_heads, cfg.dropout) if acoustic else None
        self.ff_norm = nn.LayerNorm(d)
        self.ff = FeedForward(d, cfg.d_ff, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, self_allowed, frames=None, audio_allowed=None, r=1.0):
        h = self.self_norm(x)
        x = x + self.drop(self.self_attn(h, h, self_allowed))
        if self.acoustic_attn is not None:
            x = self.acoustic_attn(x, frames, audio_allowed, _scale(r, x))
        return x + self.drop(self.ff(self.ff_norm(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, acoustic: bool):
        super().__init__()
        d = cfg.d_model
        self.self_norm = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, cfg.n_heads)
        self.acoustic_attn = AcousticAttention(d, cfg.n_heads, cfg.dropout) if acoustic else None
        self.bias_norm = nn.LayerNorm(d)
        self.bias_attn = MultiHeadAttention(d, cfg.n_heads)
        self.ff_norm = nn.LayerNorm(d)
        self.ff = FeedForward(d, cfg.d_ff, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, self_allowed, bias_emb, bias_allowed, frames=None, audio_allowed=None, r=1.0):
        h = self.self_norm(x)
        x = x + self.drop(self.self_attn(h, h, self_allowed))
        if self.acoustic_attn is not None:
            x = self.acoustic_attn(x, frames, audio_allowed, _scale(r, x))
        x = x + self.drop(self.bias_attn(self.bias_norm(x), bias_emb, bias_allowed))
        return x + self.drop(self.ff(self.ff_norm(x)))


class Stack(nn.Module):
    def __init__(self, layers: Sequence[nn.Module], d_model: int):
        super().__init__()
        self.layers = nn.ModuleList(layers)
        self.norm = nn.LayerNorm(d_model)


@dataclass
class AudioFeatureMask:
    allowed: np.ndarray  # bool [n_tokens, n_frames]
    fallback_rows: int = 0


def build_audio_mask(
    word_frame_spans: Sequence[tuple[int, int]],
    word_of_token: Sequence[int],
    n_frames: int,
    s_k: int,
) -> AudioFeatureMask:
    """Let each token see the frames of hypothesis words within ``s_k`` words of its own.

    Tokens whose window holds no frames fall back to seeing every frame;
    ``fallback_rows`` counts them.
    """
    if s_k < 1:
        raise ValueError("s_k must be >= 1")
    n_words = len(word_frame_spans)
    word_allowed = np.zeros((n_words, n_frames), dtype=bool)
    for w, (s, e) in enumerate(word_frame_spans):
        if not 0 <= s <= e <= n_frames:
            raise ValueError(f"frame span {(s, e)} outside [0, {n_frames})")
        word_allowed[w, s:e] = True
    # cumulative count per frame lets each window be a difference of prefixes
    prefix = np.concatenate([np.zeros((1, n_frames), dtype=np.int64), np.cumsum(word_allowed, axis=0)])
    allowed = np.zeros((len(word_of_token), n_frames), dtype=bool)
    fallback = 0
    for t, w in enumerate(word_of_token):
        lo, hi = max(0, w - s_k), min(n_words, w + s_k + 1)
        row = (prefix[hi] - prefix[lo]) > 0
        if not row.any():
            row = np.ones(n_frames, dtype=bool)
            fallback += 1
        allowed[t] = row
    return AudioFeatureMask(allowed, fallback)


@dataclass
class Batch:
    """Padded model inputs (and optional targets) for a batch of utterances."""

    tokens: torch.Tensor  # long [B, L]
    token_mask: torch.Tensor  # bool [B, L]
    bias_tokens: torch.Tensor  # long [B, N, P], position 0 is the phrase-start token
    bias_token_mask: torch.Tensor  # bool [B, N, P]
    bias_mask: torch.Tensor  # bool [B, N]
    frames: torch.Tensor | None = None  # float [B, T, d_in]
    audio_mask: torch.Tensor | None = None  # bool [B, L, T]
    cls: torch.Tensor | None = None  # long [B, L]
    cind: torch.Tensor | None = None  # long [B, L]

    def __len__(self) -> int:
        return self.tokens.shape[0]


class CorrectionModel(nn.Module):
    """Text encoder + bias encoder (+ acoustic adapter) + NAR tagging decoder."""

    def __init__(self, cfg: ModelConfig, seed: int | None = 0):
        super().__init__()
        if seed is not None:
            torch.manual_seed(seed)
        self.cfg = cfg
        self.token_to_id = {t: i for i, t in enumerate(cfg.vocab)}
        d = cfg.d_model
        ea, da = cfg.variant == "ea", cfg.variant == "da"
        self.embed = nn.Embedding(len(cfg.vocab), d)
        nn.init.normal_(self.embed.weight, std=d ** -0.5)
        self.text_encoder = Stack([TextEncoderLayer(cfg, ea) for _ in range(cfg.n_layers_text)], d)
        self.bias_encoder = Stack([TextEncoderLayer(cfg, False) for _ in range(cfg.n_layers_bias)], d)
        self.decoder = Stack([DecoderLayer(cfg, da) for _ in range(cfg.n_layers_dec)], d)
        self.cls_head = nn.Linear(d, N_TAGS)
        self.cind_query = nn.Linear(d, d)
        self.cind_none = nn.Parameter(torch.randn(d) * d ** -0.5)
        self.adapter = (
            AcousticAdapter(cfg.d_acoustic_in, cfg.d_adapter_hidden, d, cfg.dropout, cfg.adapter_norm)
            if cfg.variant != "text"
            else None
        )
        self.drop = nn.Dropout(cfg.dropout)

    # ---- bookkeeping -------------------------------------------------------

    @property
    def acoustic(self) -> bool:
        return self.cfg.variant != "text"

    @property
    def dtype(self) -> torch.dtype:
        return self.embed.weight.dtype

    def new_component_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters() if is_new_component(n)]

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        unk = self.token_to_id[UNK]
        return [self.token_to_id.get(t, unk) for t in tokens]

    def zero_acoustic_output(self) -> None:
        """Zero the acoustic output projections so a fresh branch contributes nothing."""
        with torch.no_grad():
            for mod in self.modules():
                if isinstance(mod, AcousticAttention):
                    mod.attn.out.weight.zero_()
                    mod.attn.out.bias.zero_()

    def load_shared(self, base: "CorrectionModel") -> None:
        """Copy every tensor of ``base`` into this model; only acoustic tensors may be left over."""
        missing, unexpected = self.load_state_dict(base.state_dict(), strict=False)
        stray = [n for n in missing if not is_new_component(n)]
        if stray or unexpected:
            raise ValueError(f"checkpoint mismatch: missing {stray}, unexpected {list(unexpected)}")

    # ---- components ----------------------------------------------------------

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.embed(ids) * math.sqrt(self.cfg.d_model)
        x = x + sinusoid_positions(ids.shape[-1], self.cfg.d_model, x.dtype)
        return self.drop(x)

    def adapt_acoustics(self, frames: torch.Tensor) -> torch.Tensor:
        if self.adapter is None:
            raise ValueError("text-only model has no acoustic adapter")
        if frames.shape[-1] != self.cfg.d_acoustic_in:
            raise ValueError(f"frame width {frames.shape[-1]} != d_acoustic_in {self.cfg.d_acoustic_in}")
        if frames.shape[-2] < 1:
            raise ValueError("need at least one frame")
        return self.adapter(frames.to(self.dtype))

    def encode_bias(self, bias_tokens: torch.Tensor, bias_token_mask: torch.Tensor) -> torch.Tensor:
        """Phrase embeddings [..., d] pooled at the phrase-start position.

        ``bias_tokens`` is [..., P] with the phrase-start token at position 0.
        """
        lead = bias_tokens.shape[:-1]
        ids = bias_tokens.reshape(-1, bias_tokens.shape[-1])
        mask = bias_token_mask.reshape(ids.shape)
        if ids.shape[-1] < 2 or not bool(mask[:, 1].all()):
            raise ValueError("empty bias phrase")
        x = self._embed(ids)
        allowed = mask[:, None, :]
        for layer in self.bias_encoder.layers:
            x = layer(x, allowed)
        x = self.bias_encoder.norm(x)
        return x[:, 0].reshape(*lead, -1)

    def encode_text(self, tokens, token_mask, adapted_frames=None, audio_mask=None, r=1.0):
        ea = self.cfg.variant == "ea"
        if ea and (adapted_frames is None or audio_mask is None):
            raise ValueError("ea variant needs adapted frames and an audio mask")
        if not ea and (adapted_frames is not None or audio_mask is not None):
            raise ValueError(f"{self.cfg.variant} text encoder takes no acoustic input")
        _check_r(r)
        x = self._embed(tokens)
        allowed = token_mask[:, None, :]
        for layer in self.text_encoder.layers:
            x = layer(x, allowed, adapted_frames, audio_mask, r)
        return self.text_encoder.norm(x)

    def decode(self, text_hidden, token_mask, bias_emb, bias_mask, adapted_frames=None, audio_mask=None, r=1.0):
        """Return (cls_logits [B, L, 4], cind_logits [B, L, N+1])."""
        da = self.cfg.variant == "da"
        if da and (adapted_frames is None or audio_mask is None):
            raise ValueError("da variant needs adapted frames and an audio mask")
        if not da and (adapted_frames is not None or audio_mask is not None):
            raise ValueError(f"{self.cfg.variant} decoder takes no acoustic input")
        if bias_emb.shape[1] == 0 or not bool(bias_mask.any(dim=1).all()):
            raise ValueError("decode needs at least one bias phrase per utterance")
        _check_r(r)
        x = text_hidden
        self_allowed = token_mask[:, None, :]
        bias_allowed = bias_mask[:, None, :]
        for layer in self.decoder.layers:
            x = layer(x, self_allowed, bias_emb, bias_allowed, adapted_frames, audio_mask, r)
        x = self.decoder.norm(x)
        cls_logits = self.cls_head(x)
        q = self.cind_query(x)
        keys = torch.cat([self.cind_none.expand(bias_emb.shape[0], 1, -1), bias_emb], dim=1)
        cind_logits = q @ keys.transpose(1, 2) / math.sqrt(self.cfg.d_model)
        pad = torch.cat([torch.zeros_like(bias_mask[:, :1]), ~bias_mask], dim=1)
        cind_logits = cind_logits.masked_fill(pad[:, None, :], PAD_LOGIT)
        return cls_logits, cind_logits

    def forward(self, batch: Batch, r=1.0) -> dict[str, torch.Tensor]:
        bias_emb = self.encode_bias(batch.bias_tokens, batch.bias_token_mask)
        adapted = mask = None
        if self.acoustic:
            if batch.frames is None or batch.audio_mask is None:
                raise ValueError("acoustic variant needs frames and an audio mask")
            adapted, mask = self.adapt_acoustics(batch.frames), batch.audio_mask
        enc_ac = (adapted, mask) if self.cfg.variant == "ea" else (None, None)
        dec_ac = (adapted, mask) if self.cfg.variant == "da" else (None, None)
        hidden = self.encode_text(batch.tokens, batch.token_mask, *enc_ac, r=r)
        cls_logits, cind_logits = self.decode(hidden, batch.token_mask, bias_emb, batch.bias_mask, *dec_ac, r=r)
        return {"cls_logits": cls_logits, "cind_logits": cind_logits}


def _check_r(r) -> None:
    vals = r.detach().flatten().tolist() if isinstance(r, torch.Tensor) else [r]
    if any(not 0.0 <= float(v) <= 1.0 for v in vals):
        raise ValueError("incorporation ratio r must lie in [0, 1]")


# ---- batching ----------------------------------------------------------------


@dataclass
class ModelInput:
    """One utterance ready for collation."""

    tokens: TokenizedText
    bias_phrases: list[list[str]]  # token lists, one per phrase
    frames: np.ndarray | None = None
    audio_mask: np.ndarray | None = None  # bool [n_tokens, n_frames]
    cls: Sequence[int] | None = None
    cind: Sequence[int] | None = None


def collate(model: CorrectionModel, items: Sequence[ModelInput]) -> Batch:
    b = len(items)
    L = max(1, max(len(it.tokens.tokens) for it in items))
    N = max(len(it.bias_phrases) for it in items)
    if N == 0:
        raise ValueError("every utterance needs a bias list")
    P = 1 + max(len(p) for it in items for p in it.bias_phrases)
    phr = model.token_to_id[PHRASE_START]
    tokens = torch.zeros(b, L, dtype=torch.long)
    token_mask = torch.zeros(b, L, dtype=torch.bool)
    bias_tokens = torch.zeros(b, N, P, dtype=torch.long)
    bias_token_mask = torch.zeros(b, N, P, dtype=torch.bool)
    bias_mask = torch.zeros(b, N, dtype=torch.bool)
    bias_tokens[:, :, 0] = phr
    bias_token_mask[:, :, 0] = True
    # padded phrase slots still get one visible token so attention rows stay finite
    bias_token_mask[:, :, 1] = True
    for i, it in enumerate(items):
        ids = model.token_ids(it.tokens.tokens)
        if ids:
            tokens[i, : len(ids)] = torch.tensor(ids)
            token_mask[i, : len(ids)] = True
        else:
            token_mask[i, 0] = True
        for j, phrase in enumerate(it.bias_phrases):
            if not phrase:
                raise ValueError("empty bias phrase")
            pid = model.token_ids(phrase)
            bias_tokens[i, j, 1 : 1 + len(pid)] = torch.tensor(pid)
            bias_token_mask[i, j, 1 : 1 + len(pid)] = True
            bias_mask[i, j] = True
    batch = Batch(tokens, token_mask, bias_tokens, bias_token_mask, bias_mask)
    if model.acoustic:
        if any(it.frames is None or it.audio_mask is None for it in items):
            raise ValueError("acoustic variant needs frames and audio masks")
        T = max(it.frames.shape[0] for it in items)
        frames = torch.zeros(b, T, model.cfg.d_acoustic_in, dtype=model.dtype)
        audio = torch.zeros(b, L, T, dtype=torch.bool)
        for i, it in enumerate(items):
            t = it.frames.shape[0]
            frames[i, :t] = torch.as_tensor(it.frames, dtype=model.dtype)
            n = it.audio_mask.shape[0]
            audio[i, :n, :t] = torch.as_tensor(it.audio_mask)
            audio[i, n:, :t] = True
        batch.frames, batch.audio_mask = frames, audio
    if all(it.cls is not None for it in items):
        cls = torch.zeros(b, L, dtype=torch.long)
        cind = torch.zeros(b, L, dtype=torch.long)
        for i, it in enumerate(items):
            n = len(it.cls)
            cls[i, :n] = torch.as_tensor(list(it.cls))
            cind[i, :n] = torch.as_tensor(list(it.cind))
        batch.cls, batch.cind = cls, cind
    return batch


# ---- checkpoints -------------------------------------------------------------


def save_checkpoint(model: CorrectionModel, path: str | Path) -> None:
    """Write header (version, config JSON, manifest) followed by little-endian float32 tensors."""
    state = model.state_dict()
    manifest = []
    payloads = []
    offset = 0
    for name, t in state.items():
        arr = t.detach().cpu().numpy().astype("<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"format_version": CHECKPOINT_VERSION, "config": model.cfg.to_dict(), "manifest": manifest},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for p in payloads:
            fh.write(p)


def load_checkpoint(path: str | Path) -> CorrectionModel:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(blob[start : start + hlen].decode("utf-8"))
    payload = memoryview(blob)[start + hlen :]
    model = CorrectionModel(ModelConfig.from_dict(header["config"]), seed=None)
    expected = {n: tuple(t.shape) for n, t in model.state_dict().items()}
    state = {}
    for entry in header["manifest"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise ValueError(f"{path}: tensor {name} has shape {shape}, config expects {expected.get(name)}")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"])
        state[name] = torch.from_numpy(arr.reshape(shape).astype(np.float32))
    if set(state) != set(expected):
        raise ValueError(f"{path}: manifest does not cover the model ({sorted(set(expected) ^ set(state))})")
    model.load_state_dict(state)
    model.eval()
    return model
