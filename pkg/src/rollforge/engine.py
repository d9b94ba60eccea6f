"""Streaming generation loops.

The rolling loop keeps a window of frames at strictly ascending noise
levels.  Each advance appends a fresh pure-noise frame, denoises the
whole window jointly in one pass, emits the now-clean leftmost frame,
caches its KV states, and re-noises the remaining frames one level
down.  Steady state therefore costs exactly one denoise pass plus one
KV pass per emitted frame.

Warm-up is a ramp of the same advance applied to growing partial
windows (window starts 2 - T .. 0): no frame is emitted and no cache is
attended until the window starts at frame 1.  The self-forcing loop
generates frame by frame instead, running the full T-level ladder per
frame against cached clean history; it exists as the trained-baseline
and ablation path.

All stochastic inputs come from counter-keyed draws (seed, frame,
level), so rollouts are bit-reproducible and the training-side rollout
that reuses `advance` sees identical noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .denoiser import Denoiser, WindowResult
from .kvcache import CacheConfig, CacheState
from .noise import frame_noise
from .schedule import NoiseSchedule, forward_diffuse


@dataclass
class StreamState:
    """Mutable state of one generation loop (single owner)."""

    window: torch.Tensor            # (batch, n_resting, frame_dim) float32
    window_levels: list[float]      # resting levels, ascending
    window_start: int               # stream index of the next window's first frame
    cache: CacheState
    condition: int
    seed: int
    schedule: NoiseSchedule
    frames_emitted: int = 0
    phase: str = "warmup"
    denoise_passes: int = 0
    kv_passes: int = 0
    warmup_passes: int = 0
    last_denoise_levels: list[float] = field(default_factory=list)

    @property
    def batch(self) -> int:
        return self.window.shape[0]


def new_stream_state(schedule: NoiseSchedule, cache_config: CacheConfig,
                     frame_dim: int, condition: int, seed: int,
                     batch: int = 1) -> StreamState:
    """Empty pre-warmup state with the window loop about to start at 2 - T."""
    if cache_config.window_frames != schedule.num_steps:
        raise ValueError(f"cache window_frames {cache_config.window_frames} != "
                         f"schedule num_steps {schedule.num_steps}")
    return StreamState(
        window=torch.zeros(batch, 0, frame_dim),
        window_levels=[],
        window_start=2 - schedule.num_steps,
        cache=CacheState(cache_config),
        condition=condition,
        seed=seed,
        schedule=schedule,
    )


def advance(model: Denoiser, state: StreamState,
            enable_grad: bool = False) -> tuple[np.ndarray | None, WindowResult]:
    """One window iteration: append noise, denoise, emit if past warm-up.

    Returns (emitted, result) where emitted is a (batch, frame_dim)
    float64 array once the window start has reached frame 1, else None
    during the ramp.  The result's x_hat carries autograd history only
    when enable_grad is set; everything fed forward (cache entries,
    re-noised window) is always detached.
    """
    sched = state.schedule
    T = sched.num_steps
    i = state.window_start
    batch, _, dim = state.window.shape

    new_frame = i + T - 1
    eps = frame_noise(state.seed, new_frame, T, batch, dim)
    fresh = torch.as_tensor(forward_diffuse(np.zeros((batch, dim)), sched.levels[-1], eps),
                            dtype=torch.float32)[:, None, :]
    window = torch.cat([state.window, fresh], dim=1)
    levels = state.window_levels + [sched.levels[-1]]
    first = max(1, i)
    if i >= 1:
        assert tuple(levels) == sched.levels, \
            f"steady window levels {levels} drifted from schedule {sched.levels}"
    state.last_denoise_levels = list(levels)

    if i >= 1 and len(state.cache):
        view = state.cache.view(i)
        offset = min(int(view.positions.min()), first)
        view.positions = view.positions - offset
    else:
        view, offset = None, first
    positions = np.arange(first, i + T) - offset

    ctx = torch.enable_grad() if enable_grad else torch.no_grad()
    with ctx:
        result = model.denoise_window(window, levels, positions, state.condition, cache=view)
    state.denoise_passes += 1
    x_hat = result.x_hat.detach()

    emitted = None
    if i >= 1:
        emitted = x_hat[:, 0].to(torch.float64).numpy()
        tview = state.cache.temporal_view(i)
        toffset = int(tview.positions.min()) if len(tview) else i
        tview.positions = tview.positions - toffset
        with torch.no_grad():
            entry = model.encode_kv(x_hat[:, 0], tview, i - toffset,
                                    state.condition, frame_index=i)
        state.cache.append(entry)
        state.kv_passes += 1
        state.frames_emitted += 1
        keep = range(1, len(levels))
    else:
        keep = range(len(levels))

    next_vals, next_levels = [], []
    for slot in keep:
        m = first + slot
        target = m - i  # level index after this iteration
        eps = frame_noise(state.seed, m, target, batch, dim)
        x = forward_diffuse(x_hat[:, slot].to(torch.float64).numpy(),
                            sched.level(target), eps)
        next_vals.append(torch.as_tensor(x, dtype=torch.float32))
        next_levels.append(sched.level(target))
    state.window = (torch.stack(next_vals, dim=1) if next_vals
                    else torch.zeros(batch, 0, dim))
    state.window_levels = next_levels
    state.window_start = i + 1
    return emitted, result


def warmup(model: Denoiser, schedule: NoiseSchedule, cache_config: CacheConfig,
           condition: int, seed: int, batch: int = 1) -> StreamState:
    """Ramp the window up to levels t_1..t_{T-1}; emits nothing.

    Runs T - 1 joint denoise passes over growing partial windows.  For
    T = 1 this is a no-op and the window stays empty.
    """
    state = new_stream_state(schedule, cache_config, model.config.frame_dim,
                             condition, seed, batch=batch)
    for _ in range(schedule.num_steps - 1):
        advance(model, state)
    state.warmup_passes = state.denoise_passes
    state.phase = "steady"
    return state


def roll_step(model: Denoiser, state: StreamState) -> tuple[np.ndarray, StreamState]:
    """Emit the next frame; exactly one denoise pass and one KV pass."""
    if state.phase != "steady":
        raise RuntimeError("roll_step called before warm-up completed")
    emitted, _ = advance(model, state)
    return emitted, state


def switch_condition(state: StreamState, new_label: int, num_labels: int) -> StreamState:
    """Swap the conditioning label; takes effect on the next pass."""
    if state.phase != "steady":
        raise RuntimeError("cannot switch condition during warm-up")
    if not 0 <= new_label < num_labels:
        raise ValueError(f"label {new_label} outside 0..{num_labels - 1}")
    state.condition = int(new_label)
    return state


class RollingStream:
    """Frame-at-a-time façade over warmup + roll_step for one stream."""

    def __init__(self, model: Denoiser, schedule: NoiseSchedule,
                 cache_config: CacheConfig, condition: int, seed: int):
        self.model = model
        self.state = warmup(model, schedule, cache_config, condition, seed)

    def next_frame(self) -> np.ndarray:
        emitted, _ = roll_step(self.model, self.state)
        return emitted[0]

    def switch_condition(self, label: int):
        switch_condition(self.state, label, self.model.config.num_regimes)

    @property
    def condition(self) -> int:
        return self.state.condition

    @property
    def frames_emitted(self) -> int:
        return self.state.frames_emitted

    @property
    def denoise_passes(self) -> int:
        return self.state.denoise_passes

    @property
    def kv_passes(self) -> int:
        return self.state.kv_passes

    @property
    def warmup_passes(self) -> int:
        return self.state.warmup_passes


class SelfForcingStream:
    """Frame-by-frame ladder generation against cached clean history."""

    def __init__(self, model: Denoiser, schedule: NoiseSchedule,
                 cache_config: CacheConfig, condition: int, seed: int):
        self.model = model
        self.schedule = schedule
        self.cache = CacheState(cache_config)
        self.condition = condition
        self.seed = seed
        self.frames_emitted = 0
        self.denoise_passes = 0
        self.kv_passes = 0
        self.warmup_passes = 0

    def next_frame(self) -> np.ndarray:
        sched = self.schedule
        model = self.model
        dim = model.config.frame_dim
        i = self.frames_emitted + 1
        T = sched.num_steps
        eps = frame_noise(self.seed, i, T, 1, dim)
        x = torch.as_tensor(forward_diffuse(np.zeros((1, dim)), sched.levels[-1], eps),
                            dtype=torch.float32)[:, None, :]
        if len(self.cache):
            view = self.cache.view(i)
            offset = min(int(view.positions.min()), i)
            view.positions = view.positions - offset
        else:
            view, offset = None, i
        x_hat = None
        for j in range(T, 0, -1):
            with torch.no_grad():
                out = model.denoise_window(x, [sched.level(j)], [i - offset],
                                           self.condition, cache=view)
            self.denoise_passes += 1
            x_hat = out.x_hat
            if j > 1:
                eps = frame_noise(self.seed, i, j - 1, 1, dim)
                noised = forward_diffuse(x_hat[:, 0].to(torch.float64).numpy(),
                                         sched.level(j - 1), eps)
                x = torch.as_tensor(noised, dtype=torch.float32)[:, None, :]
        emitted = x_hat[:, 0]
        tview = self.cache.temporal_view(i)
        toffset = int(tview.positions.min()) if len(tview) else i
        tview.positions = tview.positions - toffset
        with torch.no_grad():
            entry = model.encode_kv(emitted, tview, i - toffset,
                                    self.condition, frame_index=i)
        self.cache.append(entry)
        self.kv_passes += 1
        self.frames_emitted = i
        return emitted[0].to(torch.float64).numpy()

    def switch_condition(self, label: int):
        if not 0 <= label < self.model.config.num_regimes:
            raise ValueError(f"label {label} outside 0..{self.model.config.num_regimes - 1}")
        self.condition = int(label)


def _run_stream(stream, n_frames: int, condition_script=None) -> np.ndarray:
    script = dict(condition_script or [])
    frames = []
    for k in range(1, n_frames + 1):
        if k in script:
            stream.switch_condition(script[k])
        frames.append(stream.next_frame())
    return np.stack(frames)


def rolling_generate(model: Denoiser, schedule: NoiseSchedule, cache_config: CacheConfig,
                     n_frames: int, condition: int, seed: int,
                     condition_script=None) -> np.ndarray:
    """Generate n_frames with the rolling loop; returns (n_frames, D).

    condition_script is an optional list of (frame_index, label) pairs;
    each switch applies before the named frame is generated.
    """
    stream = RollingStream(model, schedule, cache_config, condition, seed)
    return _run_stream(stream, n_frames, condition_script)


def sf_generate(model: Denoiser, schedule: NoiseSchedule, cache_config: CacheConfig,
                n_frames: int, condition: int, seed: int,
                condition_script=None) -> np.ndarray:
    """Frame-by-frame baseline generation; N * T denoise passes total."""
    stream = SelfForcingStream(model, schedule, cache_config, condition, seed)
    return _run_stream(stream, n_frames, condition_script)
