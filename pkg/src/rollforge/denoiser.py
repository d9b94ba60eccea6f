"""Few-step velocity-predicting transformer over frame sequences.

One toy frame is one token.  The same network serves three roles:

  * denoise_window: joint bidirectional denoising of a short window of
    frames at per-frame noise levels, attending to cached history keys
    and values from earlier clean frames,
  * encode_kv: a clean pass over a single emitted frame that records
    its key/value states for the streaming cache,
  * predict_clean_sequence: bidirectional clean estimation of a whole
    sequence at one shared level, which is how the learned score of the
    generator's own outputs is parameterized.

Keys are always returned before rotary rotation; rotation happens at
attention time at whatever effective positions the caller supplies, so
cached keys can be re-positioned freely.  Conditioning is an additive
label embedding plus a per-frame sinusoidal embedding of the shifted
noise level.  Output projections start at zero, making the untrained
model the identity map on its noisy input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import schedule


@dataclass(frozen=True)
class DenoiserConfig:
    dim_model: int = 64
    num_layers: int = 4
    num_heads: int = 4
    frame_dim: int = 8
    num_regimes: int = 4
    rope_base: float = 10000.0
    max_relative_position: int = 64
    shift_k: float = 5.0
    chunk_size: int = 1
    # scaling constants of the prediction parameterization; the clean
    # estimate itself always comes from the velocity inversion
    # x_hat = x_t - sigma(t) * v, so c_skip is carried but unused there
    c_skip: float = 1.0
    c_in: float = 1.0
    c_out: float = 1.0

    def __post_init__(self):
        for name in ("dim_model", "num_layers", "num_heads", "frame_dim",
                     "num_regimes", "max_relative_position", "chunk_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dim_model % (2 * self.num_heads) != 0:
            raise ValueError("dim_model must be divisible by 2 * num_heads for rotary pairs")
        if self.rope_base <= 1.0:
            raise ValueError(f"rope_base must exceed 1, got {self.rope_base}")

    @property
    def head_dim(self) -> int:
        return self.dim_model // self.num_heads


@dataclass
class KvEntry:
    """Cached key/value states of one clean frame, keys pre-rotation."""

    frame_index: int
    keys: list          # per layer, tensor of shape (batch, heads, head_dim)
    values: list        # per layer, same shape

    def __post_init__(self):
        if self.frame_index < 1:
            raise ValueError(f"frame_index must be >= 1, got {self.frame_index}")
        if len(self.keys) != len(self.values):
            raise ValueError("per-layer key and value lists differ in length")


@dataclass
class CacheView:
    """Stacked history keys/values with their effective positions.

    keys[layer] has shape (batch, heads, n_entries, head_dim), stored
    pre-rotation; positions holds one effective position per entry.
    sink_count says how many leading entries are sink frames, which the
    KV-encoding pass is forbidden to see.
    """

    keys: list
    values: list
    positions: np.ndarray
    sink_count: int = 0

    def __len__(self) -> int:
        return 0 if not self.keys else self.keys[0].shape[2]


def stack_entries(entries: list[KvEntry], positions: list[int], sink_count: int = 0) -> CacheView:
    """Assemble a CacheView from per-frame entries and their positions."""
    if len(entries) != len(positions):
        raise ValueError("entry and position counts differ")
    if not entries:
        return CacheView(keys=[], values=[], positions=np.array([], dtype=np.int64),
                         sink_count=0)
    num_layers = len(entries[0].keys)
    keys = [torch.stack([e.keys[layer] for e in entries], dim=2) for layer in range(num_layers)]
    values = [torch.stack([e.values[layer] for e in entries], dim=2) for layer in range(num_layers)]
    return CacheView(keys=keys, values=values,
                     positions=np.asarray(positions, dtype=np.int64),
                     sink_count=sink_count)


def apply_rope(x: torch.Tensor, positions: torch.Tensor, rope_base: float) -> torch.Tensor:
    """Rotate per-head vectors (batch, heads, seq, head_dim) at the given positions.

    Pairs (0,1), (2,3), ... are rotated by angle position / base^(2i/d).
    Attention logits between rotated queries and keys then depend only
    on position differences.
    """
    d = x.shape[-1]
    half = d // 2
    freq = rope_base ** (-torch.arange(half, dtype=x.dtype, device=x.device) * 2.0 / d)
    angles = positions.to(x.dtype)[:, None] * freq[None, :]        # (seq, half)
    cos, sin = torch.cos(angles), torch.sin(angles)
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos
    return out


def sinusoidal_embedding(levels: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos features of shifted levels, shape (..., dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=levels.dtype,
                                                        device=levels.device) / half)
    args = levels[..., None] * freqs
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


@dataclass
class WindowResult:
    x_hat: torch.Tensor     # (batch, window, frame_dim)
    velocity: torch.Tensor  # (batch, window, frame_dim)
    keys: list              # per layer (batch, heads, window, head_dim), pre-rotation
    values: list


class Block(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        dm = config.dim_model
        self.ln1 = nn.LayerNorm(dm)
        self.qkv = nn.Linear(dm, 3 * dm)
        self.out_proj = nn.Linear(dm, dm)
        self.ln2 = nn.LayerNorm(dm)
        self.fc1 = nn.Linear(dm, 4 * dm)
        self.fc2 = nn.Linear(4 * dm, dm)
        self.act = nn.SiLU()


class Denoiser(nn.Module):
    """Velocity-parameterized window denoiser with cached-history attention."""

    def __init__(self, config: DenoiserConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config or DenoiserConfig()
        c = self.config
        self.in_proj = nn.Linear(c.frame_dim, c.dim_model)
        self.level_mlp = nn.Sequential(nn.Linear(c.dim_model, c.dim_model), nn.SiLU(),
                                       nn.Linear(c.dim_model, c.dim_model))
        self.label_emb = nn.Embedding(c.num_regimes, c.dim_model)
        self.blocks = nn.ModuleList([Block(c) for _ in range(c.num_layers)])
        self.ln_f = nn.LayerNorm(c.dim_model)
        self.head = nn.Linear(c.dim_model, c.frame_dim)
        self.init_parameters(seed)

    def init_parameters(self, seed: int):
        """Deterministic init; residual outputs and the head start at zero."""
        gen = torch.Generator().manual_seed(seed)

        def normal_(t):
            with torch.no_grad():
                t.normal_(0.0, 0.02, generator=gen)

        def zero_(t):
            with torch.no_grad():
                t.zero_()

        normal_(self.in_proj.weight); zero_(self.in_proj.bias)
        for lin in (self.level_mlp[0], self.level_mlp[2]):
            normal_(lin.weight); zero_(lin.bias)
        normal_(self.label_emb.weight)
        for blk in self.blocks:
            normal_(blk.qkv.weight); zero_(blk.qkv.bias)
            zero_(blk.out_proj.weight); zero_(blk.out_proj.bias)
            normal_(blk.fc1.weight); zero_(blk.fc1.bias)
            zero_(blk.fc2.weight); zero_(blk.fc2.bias)
            with torch.no_grad():
                blk.ln1.weight.fill_(1.0); blk.ln1.bias.zero_()
                blk.ln2.weight.fill_(1.0); blk.ln2.bias.zero_()
        with torch.no_grad():
            self.ln_f.weight.fill_(1.0); self.ln_f.bias.zero_()
        zero_(self.head.weight); zero_(self.head.bias)

    @property
    def dtype(self) -> torch.dtype:
        return self.in_proj.weight.dtype

    def _prepare_levels(self, levels, batch: int, window: int) -> torch.Tensor:
        lv = torch.as_tensor(np.asarray(levels, dtype=np.float64), dtype=self.dtype)
        if lv.ndim == 0:
            lv = lv.expand(batch, window).clone()
        elif lv.ndim == 1:
            if lv.shape[0] == window:
                lv = lv[None, :].expand(batch, window).clone()
            elif lv.shape[0] == batch:
                lv = lv[:, None].expand(batch, window).clone()
            else:
                raise ValueError(f"levels shape {tuple(lv.shape)} fits neither window "
                                 f"{window} nor batch {batch}")
        elif lv.shape != (batch, window):
            raise ValueError(f"levels shape {tuple(lv.shape)} != ({batch}, {window})")
        return lv

    def forward_window(self, values: torch.Tensor, levels, positions, condition,
                       cache: CacheView | None = None,
                       attn_mask: torch.Tensor | None = None) -> WindowResult:
        """One forward pass over a window of frames.

        values: (batch, window, frame_dim) noisy frames.
        levels: raw noise levels, scalar, (window,), (batch,) or (batch, window).
        positions: (window,) integer effective positions of the frames.
        condition: regime label, int or (batch,) int tensor.
        cache: optional history CacheView attended by every query.
        attn_mask: optional bool (window, n_cache + window), True = attend.

        Returns the clean estimates, the raw velocities, and this
        window's pre-rotation keys and values for caching.
        """
        c = self.config
        if values.ndim != 3 or values.shape[-1] != c.frame_dim:
            raise ValueError(f"values must be (batch, window, {c.frame_dim}), "
                             f"got {tuple(values.shape)}")
        batch, window, _ = values.shape
        values = values.to(self.dtype)
        lv = self._prepare_levels(levels, batch, window)
        pos = torch.as_tensor(np.asarray(positions, dtype=np.int64))
        if pos.shape != (window,):
            raise ValueError(f"positions shape {tuple(pos.shape)} != ({window},)")
        cond = torch.as_tensor(condition, dtype=torch.long).reshape(-1)
        if cond.numel() == 1:
            cond = cond.expand(batch)
        if torch.any(cond < 0) or torch.any(cond >= c.num_regimes):
            raise ValueError(f"condition label out of range 0..{c.num_regimes - 1}")

        shifted = _shift_tensor(lv, c.shift_k)
        sig = shifted / schedule.MAX_LEVEL
        h = self.in_proj(c.c_in * values)
        h = h + self.level_mlp(sinusoidal_embedding(shifted, c.dim_model))
        h = h + self.label_emb(cond)[:, None, :]

        n_cache = len(cache) if cache is not None else 0
        if attn_mask is not None and attn_mask.shape != (window, n_cache + window):
            raise ValueError(f"attn_mask shape {tuple(attn_mask.shape)} != "
                             f"({window}, {n_cache + window})")

        keys_out, values_out = [], []
        scale = 1.0 / math.sqrt(c.head_dim)
        for li, blk in enumerate(self.blocks):
            x = blk.ln1(h)
            qkv = blk.qkv(x).reshape(batch, window, 3, c.num_heads, c.head_dim)
            q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))
            keys_out.append(k)
            values_out.append(v)
            q_rot = apply_rope(q, pos, c.rope_base)
            k_rot = apply_rope(k, pos, c.rope_base)
            if n_cache:
                cpos = torch.as_tensor(cache.positions, dtype=torch.long)
                ck = apply_rope(cache.keys[li].to(self.dtype), cpos, c.rope_base)
                k_all = torch.cat([ck, k_rot], dim=2)
                v_all = torch.cat([cache.values[li].to(self.dtype), v], dim=2)
            else:
                k_all, v_all = k_rot, v
            scores = torch.einsum("bhqd,bhkd->bhqk", q_rot, k_all) * scale
            if attn_mask is not None:
                scores = scores.masked_fill(~attn_mask[None, None, :, :], float("-inf"))
            attn = torch.softmax(scores, dim=-1)
            o = torch.einsum("bhqk,bhkd->bhqd", attn, v_all)
            o = o.transpose(1, 2).reshape(batch, window, c.dim_model)
            h = h + blk.out_proj(o)
            h = h + blk.fc2(blk.act(blk.fc1(blk.ln2(h))))

        velocity = c.c_out * self.head(self.ln_f(h))
        x_hat = values - sig[..., None] * velocity
        return WindowResult(x_hat=x_hat, velocity=velocity, keys=keys_out, values=values_out)

    def denoise_window(self, values: torch.Tensor, levels, positions, condition,
                       cache: CacheView | None = None) -> WindowResult:
        """Joint window denoising with the streaming-contract checks.

        Levels must be strictly ascending along the window, positions
        consecutive, and every cache position must precede the window.
        Attention is bidirectional inside the window and unmasked
        toward the cache.
        """
        lv = np.atleast_1d(np.asarray(levels, dtype=np.float64))
        if lv.ndim == 1 and len(lv) > 1 and not np.all(np.diff(lv) > 0):
            raise ValueError(f"window levels must be strictly ascending, got {lv.tolist()}")
        pos = np.asarray(positions, dtype=np.int64)
        if len(pos) > 1 and not np.all(np.diff(pos) == 1):
            raise ValueError(f"window positions must be consecutive, got {pos.tolist()}")
        if cache is not None and len(cache) and cache.positions.max() >= pos.min():
            raise ValueError(f"cache position {int(cache.positions.max())} not before "
                             f"window start {int(pos.min())}")
        return self.forward_window(values, levels, positions, condition, cache=cache)

    def encode_kv(self, frame: torch.Tensor, cache: CacheView | None, position: int,
                  condition, frame_index: int) -> KvEntry:
        """Clean pass over one emitted frame, recording its KV states.

        The pass runs at level 0 and may attend only the temporal part
        of the cache, never sink entries.
        """
        if cache is not None and cache.sink_count > 0:
            raise ValueError("KV encoding must not see sink entries")
        if frame.ndim == 2:
            frame = frame[:, None, :]
        out = self.forward_window(frame, 0.0, [position], condition, cache=cache)
        keys = [k[:, :, 0] for k in out.keys]
        vals = [v[:, :, 0] for v in out.values]
        return KvEntry(frame_index=frame_index, keys=keys, values=vals)

    def predict_clean_sequence(self, values: torch.Tensor, level, condition) -> torch.Tensor:
        """Bidirectional clean estimate of a sequence at one shared level.

        level may be a scalar or one value per batch element; frames
        within a sequence must share their level, so a full
        (batch, window) array is rejected unless its rows are constant.
        """
        batch, window, _ = values.shape
        lv = np.asarray(level, dtype=np.float64)
        if lv.ndim == 0:
            per_elem = np.full(batch, float(lv))
        elif lv.ndim == 1 and lv.shape[0] == batch:
            per_elem = lv
        else:
            full = np.broadcast_to(lv, (batch, window))
            if np.any(full != full[:, :1]):
                raise ValueError("clean-sequence prediction requires one level per sequence")
            per_elem = full[:, 0].copy()
        out = self.forward_window(values, per_elem, np.arange(window), condition)
        return out.x_hat


def _shift_tensor(t: torch.Tensor, shift_k: float) -> torch.Tensor:
    u = t / schedule.MAX_LEVEL
    return shift_k * u / (1.0 + (shift_k - 1.0) * u) * schedule.MAX_LEVEL
