"""Distillation training for the rolling generator.

The generator is trained on its own rollouts (no world samples ever
enter a rollout).  A rollout predicts clean frames 1..N; the training
gradient flows through only a subset of denoise passes:

  * rf_rollout re-runs the engine's rolling loop and enables gradients
    for the non-overlapping windows whose starts are congruent to a
    sampled offset j modulo T.  Those windows partition frames 1..N, so
    every frame is predicted exactly once with gradient, at the noise
    level its window position dictates, for about N/T tracked passes.
  * sf_rollout generates frame by frame and tracks the single ladder
    pass whose input level is t_j (an extra clean-level pass when
    j = 0), N tracked passes total.
  * full_gradient_rollout tracks every window and picks the j-th frame
    of each; it costs N tracked passes and exists purely as a small-N
    reference for the window-selection logic.

The generator update matches distributions: diffuse the last
eval_window predicted frames jointly, take the exact data score of the
linear-Gaussian world, subtract the learned score of the generator's
own outputs (a posterior-mean network queried at the same level), and
feed the difference back through the recorded frames via a
stop-gradient inner product.  The fake score is refreshed several
times per generator step by plain denoising regression on the same
rollout samples.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from . import engine, schedule
from .denoiser import CacheView, Denoiser
from .kvcache import CacheConfig, CacheState
from .noise import frame_noise
from .schedule import NoiseSchedule, forward_diffuse, posterior_score
from .world import Regime, analytic_data_score, joint_gaussian, sample_sequence

MAX_ORACLE_FRAMES = 8


@dataclass(frozen=True)
class TrainConfig:
    """Distillation settings.

    Learning rates are toy-scale values; the full-scale counterparts
    (1.5e-6 generator, 4e-7 fake) are far too small for a model this
    size.  mix_prob_sf at an endpoint degenerates to single-mode
    training, which the ablation runs rely on.

    lr_final_frac < 1 cosine-decays both learning rates to that
    fraction of their base value by the last step.  The normalized
    score-difference update has a roughly constant step size however
    close the two score fields are, so without decay the generator
    orbits its target instead of landing on it.
    """

    steps: int = 3000
    batch: int = 8
    lr_generator: float = 1e-4
    lr_fake: float = 4e-5
    fake_updates_per_gen: int = 5
    n_min: int = 21
    n_max: int = 27
    eval_window: int = 21
    mix_prob_sf: float = 0.5
    dmd_t_range: tuple[float, float] = (20.0, 980.0)
    normalize_dmd: bool = True
    lr_final_frac: float = 1.0

    def __post_init__(self):
        if self.n_min < self.eval_window:
            raise ValueError(f"n_min {self.n_min} < eval_window {self.eval_window}")
        if self.n_min > self.n_max:
            raise ValueError("n_min > n_max")
        if not 0.0 <= self.mix_prob_sf <= 1.0:
            raise ValueError("mix_prob_sf must lie in [0, 1]")
        if self.lr_generator <= 0 or self.lr_fake <= 0:
            raise ValueError("learning rates must be positive")
        low, high = self.dmd_t_range
        if not 0.0 < low < high < schedule.MAX_LEVEL:
            raise ValueError(f"dmd_t_range must satisfy 0 < low < high < 1000, "
                             f"got {self.dmd_t_range}")
        if not 0.0 <= self.lr_final_frac <= 1.0:
            raise ValueError("lr_final_frac must lie in [0, 1]")


@dataclass
class PretrainConfig:
    steps: int = 2000
    batch: int = 8
    seq_len: int = 27
    lr: float = 1e-3


@dataclass
class RolloutRecord:
    """Predicted clean frames 1..N from one self-rollout."""

    predicted_clean: torch.Tensor   # (batch, n_frames, frame_dim)
    grad_mask: np.ndarray           # (n_frames,) bool
    mode: str                       # "SF" | "RF" | "FULL"
    j: int
    n_frames: int
    condition: int
    seed: int
    grad_passes: int = 0
    frame_levels: np.ndarray | None = None   # denoise input level per frame
    self_generated: bool = True


def gradient_window_starts(n_frames: int, num_steps: int, j: int) -> list[int]:
    """Window starts congruent to j mod T, from the ramp through frame N.

    Starts run from 2 - T (the first ramp window that can touch frame
    1) up to N.  The windows [i, i + T - 1] clipped to 1..N partition
    {1..N}: every frame lies in exactly one selected window.
    """
    if not 0 <= j <= num_steps - 1:
        raise ValueError(f"j must lie in 0..{num_steps - 1}, got {j}")
    return [i for i in range(2 - num_steps, n_frames + 1)
            if (i - j) % num_steps == 0]


def rf_rollout(model: Denoiser, sched: NoiseSchedule, cache_config: CacheConfig,
               n_frames: int, j: int, condition: int, seed: int,
               batch: int = 1, enable_grad: bool = True) -> RolloutRecord:
    """Rolling self-rollout recording the gradient-window predictions.

    Runs the exact engine loop (warm-up ramp included); windows whose
    start is congruent to j mod T run with gradient tracking and
    contribute their clean predictions, everything else runs
    gradient-free.  KV encoding is always gradient-free.
    """
    T = sched.num_steps
    selected = set(gradient_window_starts(n_frames, T, j))
    state = engine.new_stream_state(sched, cache_config, model.config.frame_dim,
                                    condition, seed, batch=batch)
    slots: list = [None] * (n_frames + 1)
    levels = np.zeros(n_frames + 1)
    grad_passes = 0
    for i in range(2 - T, n_frames + 1):
        take = i in selected
        grad = take and enable_grad
        _, result = engine.advance(model, state, enable_grad=grad)
        if grad:
            grad_passes += 1
        if take:
            first = max(1, i)
            for slot, m in enumerate(range(first, i + T)):
                if 1 <= m <= n_frames:
                    if slots[m] is not None:
                        raise AssertionError(f"frame {m} predicted by two windows")
                    slots[m] = result.x_hat[:, slot] if grad else result.x_hat[:, slot].detach()
                    levels[m] = sched.level(m - i + 1)
    missing = [m for m in range(1, n_frames + 1) if slots[m] is None]
    if missing:
        raise AssertionError(f"frames {missing} not covered by any selected window")
    predicted = torch.stack(slots[1:], dim=1)
    mask = np.full(n_frames, bool(enable_grad))
    return RolloutRecord(predicted_clean=predicted, grad_mask=mask, mode="RF", j=j,
                         n_frames=n_frames, condition=condition, seed=seed,
                         grad_passes=grad_passes, frame_levels=levels[1:])


def sf_rollout(model: Denoiser, sched: NoiseSchedule, cache_config: CacheConfig,
               n_frames: int, j: int, condition: int, seed: int,
               batch: int = 1, enable_grad: bool = True) -> RolloutRecord:
    """Frame-by-frame self-rollout recording predictions from level t_j.

    Each frame runs the full T-level ladder; the pass whose input sits
    at t_j is gradient-tracked and recorded.  j = 0 adds one extra
    tracked pass on the already-clean frame, since the ladder itself
    never takes a clean input.  The stream continues from the ladder
    output either way.
    """
    T = sched.num_steps
    if not 0 <= j <= T - 1:
        raise ValueError(f"j must lie in 0..{T - 1}, got {j}")
    dim = model.config.frame_dim
    cache = CacheState(cache_config)
    slots = []
    grad_passes = 0
    for i in range(1, n_frames + 1):
        eps = frame_noise(seed, i, T, batch, dim)
        x = torch.as_tensor(forward_diffuse(np.zeros((batch, dim)), sched.levels[-1], eps),
                            dtype=torch.float32)[:, None, :]
        if len(cache):
            view = cache.view(i)
            offset = min(int(view.positions.min()), i)
            view.positions = view.positions - offset
        else:
            view, offset = None, i
        x_hat = None
        for jj in range(T, 0, -1):
            take = jj == j
            grad = take and enable_grad
            ctx = torch.enable_grad() if grad else torch.no_grad()
            with ctx:
                out = model.denoise_window(x, [sched.level(jj)], [i - offset],
                                           condition, cache=view)
            if take:
                slots.append(out.x_hat[:, 0] if grad else out.x_hat[:, 0].detach())
                if grad:
                    grad_passes += 1
            x_hat = out.x_hat.detach()
            if jj > 1:
                eps = frame_noise(seed, i, jj - 1, batch, dim)
                noised = forward_diffuse(x_hat[:, 0].to(torch.float64).numpy(),
                                         sched.level(jj - 1), eps)
                x = torch.as_tensor(noised, dtype=torch.float32)[:, None, :]
        if j == 0:
            ctx = torch.enable_grad() if enable_grad else torch.no_grad()
            with ctx:
                out0 = model.denoise_window(x_hat[:, :1], [0.0], [i - offset],
                                            condition, cache=view)
            slots.append(out0.x_hat[:, 0] if enable_grad else out0.x_hat[:, 0].detach())
            if enable_grad:
                grad_passes += 1
        tview = cache.temporal_view(i)
        toffset = int(tview.positions.min()) if len(tview) else i
        tview.positions = tview.positions - toffset
        with torch.no_grad():
            entry = model.encode_kv(x_hat[:, 0], tview, i - toffset,
                                    condition, frame_index=i)
        cache.append(entry)
    predicted = torch.stack(slots, dim=1)
    if predicted.shape[1] != n_frames:
        raise AssertionError(f"recorded {predicted.shape[1]} frames, expected {n_frames}")
    mask = np.full(n_frames, bool(enable_grad))
    levels = np.full(n_frames, sched.level(j))
    return RolloutRecord(predicted_clean=predicted, grad_mask=mask, mode="SF", j=j,
                         n_frames=n_frames, condition=condition, seed=seed,
                         grad_passes=grad_passes, frame_levels=levels)


def full_gradient_rollout(model: Denoiser, sched: NoiseSchedule, cache_config: CacheConfig,
                          n_frames: int, j: int, condition: int, seed: int,
                          batch: int = 1, enable_grad: bool = True) -> RolloutRecord:
    """Every-window reference: frame i + j of each window, all at t_{j+1}.

    Tracks N windows instead of about N/T, so it is capped to tiny N
    and used only to cross-check the selective variant.
    """
    if n_frames > MAX_ORACLE_FRAMES:
        raise ValueError(f"full-gradient rollout capped at {MAX_ORACLE_FRAMES} frames, "
                         f"requested {n_frames}")
    T = sched.num_steps
    if not 0 <= j <= T - 1:
        raise ValueError(f"j must lie in 0..{T - 1}, got {j}")
    state = engine.new_stream_state(sched, cache_config, model.config.frame_dim,
                                    condition, seed, batch=batch)
    slots: list = [None] * (n_frames + 1)
    grad_passes = 0
    for i in range(2 - T, n_frames + 1):
        take = 1 - j <= i <= n_frames - j
        grad = take and enable_grad
        _, result = engine.advance(model, state, enable_grad=grad)
        if grad:
            grad_passes += 1
        if take:
            m = i + j
            slot = m - max(1, i)
            slots[m] = result.x_hat[:, slot] if grad else result.x_hat[:, slot].detach()
    predicted = torch.stack(slots[1:], dim=1)
    mask = np.full(n_frames, bool(enable_grad))
    levels = np.full(n_frames, sched.level(j + 1))
    return RolloutRecord(predicted_clean=predicted, grad_mask=mask, mode="FULL", j=j,
                         n_frames=n_frames, condition=condition, seed=seed,
                         grad_passes=grad_passes, frame_levels=levels)


_suffix_cache: dict = {}


def _suffix_joint(regime: Regime, window: int):
    key = (regime.label, regime.dim, regime.rotation_angle, regime.contraction,
           regime.process_noise, window)
    if key not in _suffix_cache:
        _suffix_cache[key] = joint_gaussian(regime, window, stationary_start=True)
    return _suffix_cache[key]


def dmd_step(model: Denoiser, fake_model: Denoiser, record: RolloutRecord,
             regime: Regime, cfg: TrainConfig, rng: np.random.Generator,
             gen_score_fn=None) -> dict:
    """Score-difference update on the rollout's last eval_window frames.

    Diffuses the predicted suffix to a per-element random level, forms
    g = -(1 - sigma) * (s_data - s_gen) with the exact world score and
    the fake network's posterior-mean score, optionally normalized by
    the mean absolute score difference, and backpropagates the
    stop-gradient surrogate <g, x_hat> through grad-masked frames.
    Gradients accumulate on model parameters; diagnostics (including
    the raw g) are returned.

    gen_score_fn overrides the fake network: it receives the flattened
    diffused batch and the levels and must return scores, which lets
    tests substitute the data score itself.
    """
    w = cfg.eval_window
    if record.n_frames < w:
        raise ValueError(f"rollout has {record.n_frames} frames, need eval_window {w}")
    shift_k = model.config.shift_k
    x_hat = record.predicted_clean[:, -w:]
    batch, _, dim = x_hat.shape
    x_np = x_hat.detach().to(torch.float64).numpy()
    low, high = cfg.dmd_t_range
    t = rng.uniform(low, high, size=batch)
    eps = rng.standard_normal((batch, w, dim))
    z = forward_diffuse(x_np, t[:, None, None], eps, shift_k)
    z_flat = z.reshape(batch, w * dim)

    jg = _suffix_joint(regime, w)
    s_data = analytic_data_score(z_flat, t, jg, shift_k)
    if gen_score_fn is not None:
        s_gen = np.asarray(gen_score_fn(z_flat, t), dtype=np.float64)
    else:
        with torch.no_grad():
            x_fake = fake_model.predict_clean_sequence(
                torch.as_tensor(z, dtype=torch.float32), t, record.condition)
        s_gen = posterior_score(z_flat, x_fake.to(torch.float64).numpy().reshape(batch, -1),
                                t[:, None], shift_k)

    diff = s_data - s_gen
    sig = schedule.sigma(t, shift_k)
    g = -(1.0 - sig)[:, None] * diff
    if cfg.normalize_dmd:
        scale = np.maximum(np.mean(np.abs(diff), axis=1), 1e-12)
        g = g / scale[:, None]
    g3 = g.reshape(batch, w, dim)

    mask = torch.as_tensor(record.grad_mask[-w:].copy(), dtype=torch.bool)
    g_t = torch.as_tensor(g3, dtype=x_hat.dtype)
    surrogate = (g_t[:, mask] * x_hat[:, mask]).sum() / batch
    if surrogate.requires_grad:
        surrogate.backward()
    return {
        "surrogate": float(surrogate.detach()),
        "g": g3,
        "t": t,
        "score_diff_abs_mean": float(np.mean(np.abs(diff))),
        "g_abs_mean": float(np.mean(np.abs(g))),
    }


def fake_score_update(fake_model: Denoiser, optimizer: torch.optim.Optimizer,
                      samples, condition: int, cfg: TrainConfig,
                      rng: np.random.Generator) -> float:
    """One denoising-regression step of the fake score network.

    Diffuses the (gradient-free) generator samples to random levels and
    regresses the network's clean estimate back onto them.
    """
    if isinstance(samples, torch.Tensor):
        samples = samples.detach().to(torch.float64).numpy()
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[0] == 0:
        raise ValueError(f"samples must be (batch>0, window, dim), got {samples.shape}")
    batch = samples.shape[0]
    shift_k = fake_model.config.shift_k
    low, high = cfg.dmd_t_range
    t = rng.uniform(low, high, size=batch)
    eps = rng.standard_normal(samples.shape)
    z = forward_diffuse(samples, t[:, None, None], eps, shift_k)
    pred = fake_model.predict_clean_sequence(torch.as_tensor(z, dtype=torch.float32),
                                             t, condition)
    target = torch.as_tensor(samples, dtype=torch.float32)
    loss = torch.mean((pred - target) ** 2)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def pretrain_step(model: Denoiser, optimizer: torch.optim.Optimizer,
                  sequences: np.ndarray, labels: np.ndarray,
                  rng: np.random.Generator) -> float:
    """Teacher-forced velocity regression on world sequences.

    Two passes share one graph: a clean causal pass produces history
    keys/values, then each frame, independently diffused to its own
    level, predicts velocity while attending its own token plus the
    clean keys of strictly earlier frames.  The loss is the per-frame
    squared velocity error summed over coordinates.
    """
    batch, n, dim = sequences.shape
    shift_k = model.config.shift_k
    t = rng.uniform(0.0, schedule.MAX_LEVEL, size=(batch, n))
    eps = rng.standard_normal(sequences.shape)
    x_t = forward_diffuse(sequences, t[..., None], eps, shift_k)
    v_target = torch.as_tensor(eps - sequences, dtype=torch.float32)

    clean = torch.as_tensor(sequences, dtype=torch.float32)
    positions = np.arange(n)
    causal = torch.tril(torch.ones(n, n, dtype=torch.bool))
    clean_out = model.forward_window(clean, np.zeros((batch, n)), positions,
                                     labels, attn_mask=causal)
    cache = CacheView(keys=clean_out.keys, values=clean_out.values,
                      positions=positions, sink_count=0)
    strict_past = torch.tril(torch.ones(n, n, dtype=torch.bool), diagonal=-1)
    mask = torch.cat([strict_past, torch.eye(n, dtype=torch.bool)], dim=1)
    noisy_out = model.forward_window(torch.as_tensor(x_t, dtype=torch.float32),
                                     t, positions, labels, cache=cache, attn_mask=mask)
    loss = ((noisy_out.velocity - v_target) ** 2).sum(dim=-1).mean()
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def make_optimizer(model: Denoiser, lr: float) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=lr, betas=(0.9, 0.95),
                             weight_decay=0.0)


def decayed_lr(base: float, step: int, total: int, final_frac: float) -> float:
    """Cosine ramp from base at step 0 to base * final_frac at the last step."""
    if final_frac == 1.0 or total <= 1:
        return base
    u = step / (total - 1)
    return base * (final_frac + (1.0 - final_frac) * 0.5 * (1.0 + math.cos(math.pi * u)))


def pretrain(model: Denoiser, regimes: list[Regime], cfg: PretrainConfig,
             seed: int, log_path=None) -> list[dict]:
    """Run teacher-forced pretraining; returns the per-step loss log."""
    rng = np.random.default_rng(seed)
    optimizer = make_optimizer(model, cfg.lr)
    history = []
    log = open(log_path, "w") if log_path else None
    try:
        for step in range(cfg.steps):
            labels = rng.integers(0, len(regimes), size=cfg.batch)
            seqs = np.stack([sample_sequence(regimes[lab], cfg.seq_len,
                                             seed=int(rng.integers(2 ** 31)))
                             for lab in labels])
            loss = pretrain_step(model, optimizer, seqs, labels, rng)
            rec = {"step": step, "loss": loss}
            history.append(rec)
            if log:
                log.write(json.dumps(rec) + "\n")
    finally:
        if log:
            log.close()
    return history


def sample_rollout_plan(rng: np.random.Generator, cfg: TrainConfig,
                        num_steps: int, num_regimes: int) -> dict:
    """Draw one generator step's rollout settings (mode, j, N, regime)."""
    mode = "SF" if rng.random() < cfg.mix_prob_sf else "RF"
    return {
        "mode": mode,
        "j": int(rng.integers(0, num_steps)),
        "n_frames": int(rng.integers(cfg.n_min, cfg.n_max + 1)),
        "regime_index": int(rng.integers(0, num_regimes)),
        "seed": int(rng.integers(0, 2 ** 31)),
    }


def distill(model: Denoiser, fake_model: Denoiser, regimes: list[Regime],
            cfg: TrainConfig, cache_config: CacheConfig, seed: int,
            log_path=None, pretrained: bool = True) -> dict:
    """Alternate fake-score refreshes and score-difference generator steps.

    Per generator step: sample a rollout plan, roll the generator out
    with selective gradients, refresh the fake score
    fake_updates_per_gen times on the rollout's evaluation suffix, then
    apply the score-difference update.  Writes one JSON line per
    update (fake and generator alike) when log_path is given.
    """
    if not pretrained:
        warnings.warn("distilling from weights not flagged as pretrained")
    sched = NoiseSchedule(shift_k=model.config.shift_k,
                          num_steps=cache_config.window_frames)
    rng = np.random.default_rng(seed)
    gen_opt = make_optimizer(model, cfg.lr_generator)
    fake_opt = make_optimizer(fake_model, cfg.lr_fake)
    rollout_fns = {"SF": sf_rollout, "RF": rf_rollout}
    log = open(log_path, "w") if log_path else None
    last = {}
    try:
        for step in range(cfg.steps):
            if cfg.lr_final_frac != 1.0:
                for opt, base in ((gen_opt, cfg.lr_generator),
                                  (fake_opt, cfg.lr_fake)):
                    lr = decayed_lr(base, step, cfg.steps, cfg.lr_final_frac)
                    for grp in opt.param_groups:
                        grp["lr"] = lr
            plan = sample_rollout_plan(rng, cfg, sched.num_steps, len(regimes))
            regime = regimes[plan["regime_index"]]
            record = rollout_fns[plan["mode"]](
                model, sched, cache_config, plan["n_frames"], plan["j"],
                regime.label, plan["seed"], batch=cfg.batch, enable_grad=True)
            suffix = record.predicted_clean[:, -cfg.eval_window:].detach()
            for _ in range(cfg.fake_updates_per_gen):
                fake_loss = fake_score_update(fake_model, fake_opt, suffix,
                                              regime.label, cfg, rng)
                if log:
                    log.write(json.dumps({"step": step, "update": "fake",
                                          "mode": plan["mode"], "loss": fake_loss}) + "\n")
            gen_opt.zero_grad(set_to_none=True)
            diag = dmd_step(model, fake_model, record, regime, cfg, rng)
            grad_sq = 0.0
            for p in model.parameters():
                if p.grad is not None:
                    grad_sq += float((p.grad ** 2).sum())
            gen_opt.step()
            last = {"step": step, "update": "generator", "mode": plan["mode"],
                    "j": plan["j"], "n_frames": plan["n_frames"],
                    "regime": regime.label, "grad_norm": grad_sq ** 0.5,
                    "surrogate": diag["surrogate"],
                    "score_diff_abs_mean": diag["score_diff_abs_mean"]}
            if log:
                log.write(json.dumps(last) + "\n")
    finally:
        if log:
            log.close()
    return {"steps": cfg.steps, "last": last}
