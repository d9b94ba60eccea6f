"""HTTP streaming service around the rolling engine.

Each stream session owns one generation thread.  Frames flow to
clients as server-sent events through a bounded queue (drop-oldest;
drops are reported in the next delivered event's `dropped` field, so a
stalling client sees explicit gaps while a keeping-up client sees a
gapless strictly increasing frame_index).  Condition switches and
stats are plain JSON endpoints.  If a built frontend bundle exists, it
is served from the same origin.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from collections import deque
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .checkpoint import load_checkpoint, resolve_checkpoint
from .kvcache import CacheConfig
from .metrics import DriftTracker, PerfReport
from .schedule import NoiseSchedule
from .world import Regime, default_regimes
from .engine import RollingStream

SHUTDOWN_GRACE_S = 2.0


@dataclass
class ServiceConfig:
    checkpoint: str | None = None
    fps: float = 16.0            # pacing of event emission; 0 = as fast as possible
    queue_size: int = 256
    static_dir: str | None = None


def load_runtime(checkpoint: str):
    """Model plus the world/schedule/cache recorded in its manifest."""
    path = resolve_checkpoint(checkpoint)
    model, manifest = load_checkpoint(path)
    meta = manifest.get("metadata", {})
    if "world" in meta:
        regimes = [Regime.from_config(c) for c in meta["world"]]
    else:
        regimes = default_regimes(model.config.frame_dim)
    s = meta.get("schedule", {})
    sched = NoiseSchedule(shift_k=s.get("shift_k", model.config.shift_k),
                          num_steps=s.get("num_steps", 5))
    c = meta.get("cache", {})
    cache_config = CacheConfig(sink_frames=c.get("sink_frames", 1),
                               recent_frames=c.get("recent_frames", 1),
                               window_frames=c.get("window_frames", sched.num_steps))
    return model, manifest, regimes, sched, cache_config


class StreamSession:
    """One generation loop, its event queue and rolling statistics."""

    def __init__(self, sid: str, model, regimes, sched, cache_config,
                 condition: int, seed: int, fps: float, queue_size: int):
        self.id = sid
        self.model = model
        self.regimes = regimes
        self.created_at = time.time()
        self.fps = fps
        self.step_lock = threading.Lock()
        self.cond = threading.Condition()
        self.queue: deque[dict] = deque()
        self.queue_size = queue_size
        self._dropped_pending = 0
        self.stop_event = threading.Event()
        self.compute_times: deque[float] = deque(maxlen=256)
        self.stream = RollingStream(model, sched, cache_config, condition, seed)
        self.tracker = DriftTracker(regimes[condition])
        self.thread = threading.Thread(target=self._run, daemon=True,
                                       name=f"stream-{sid}")
        self.thread.start()

    def _run(self):
        interval = 1.0 / self.fps if self.fps > 0 else 0.0
        next_tick = time.perf_counter()
        while not self.stop_event.is_set():
            if interval:
                next_tick += interval
                delay = next_tick - time.perf_counter()
                if delay > 0 and self.stop_event.wait(delay):
                    break
            with self.step_lock:
                t0 = time.perf_counter()
                frame = self.stream.next_frame()
                compute_ms = (time.perf_counter() - t0) * 1000.0
                event = {
                    "frame_index": self.stream.frames_emitted,
                    "latent": [float(v) for v in frame],
                    "projection_2d": [float(frame[0]), float(frame[1])],
                    "condition": self.stream.condition,
                    "emit_latency_ms": compute_ms,
                }
            self.compute_times.append(compute_ms / 1000.0)
            self.tracker.add(frame)
            with self.cond:
                if len(self.queue) >= self.queue_size:
                    self.queue.popleft()
                    self._dropped_pending += 1
                self.queue.append(event)
                self.cond.notify_all()

    def events(self):
        """Blocking generator of SSE-framed frame events.

        Evicted frames are always contiguous predecessors of the
        queue head, so stamping the eviction count onto the next
        delivered event makes the dropped field equal the gap in
        frame_index exactly.
        """
        while True:
            with self.cond:
                while not self.queue and not self.stop_event.is_set():
                    if not self.cond.wait(timeout=0.5):
                        break
                event = self.queue.popleft() if self.queue else None
                if event is not None:
                    event["dropped"] = self._dropped_pending
                    self._dropped_pending = 0
                stopped = self.stop_event.is_set()
            if event is not None:
                yield f"event: frame\ndata: {json.dumps(event)}\n\n"
            elif stopped:
                return
            else:
                yield ": keepalive\n\n"

    def switch(self, label: int):
        with self.step_lock:
            self.stream.switch_condition(label)
            return self.stream.frames_emitted

    def stats(self) -> dict:
        times = list(self.compute_times)
        perf = None
        if times:
            median = float(np.median(times))
            perf = PerfReport(steady_fps=1.0 / median, steady_latency_s=median,
                              warmup_passes=self.stream.warmup_passes).to_dict()
        drift = self.tracker.report()
        return {
            "id": self.id,
            "frames_emitted": self.stream.frames_emitted,
            "condition": self.stream.condition,
            "perf": perf,
            "drift": drift.to_dict() if drift else None,
        }

    def stop(self, timeout: float = SHUTDOWN_GRACE_S):
        self.stop_event.set()
        with self.cond:
            self.cond.notify_all()
        self.thread.join(timeout)


class CreateStream(BaseModel):
    checkpoint: str | None = None
    condition: int = 0
    seed: int | None = None


class SetCondition(BaseModel):
    label: int


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    sessions: dict[str, StreamSession] = {}
    runtimes: dict[str, tuple] = {}

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        deadline = time.time() + SHUTDOWN_GRACE_S
        for session in list(sessions.values()):
            session.stop(timeout=max(0.0, deadline - time.time()))
        sessions.clear()

    app = FastAPI(title="rollforge streaming service", lifespan=lifespan)
    app.state.sessions = sessions

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def runtime_for(name: str | None):
        key = name or config.checkpoint
        if key is None:
            raise HTTPException(status_code=400,
                                detail="no checkpoint given and none configured")
        if key not in runtimes:
            try:
                runtimes[key] = load_runtime(key)
            except FileNotFoundError as err:
                raise HTTPException(status_code=400, detail=str(err))
        return runtimes[key]

    def get_session(stream_id: str) -> StreamSession:
        session = sessions.get(stream_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown stream {stream_id}")
        return session

    @app.get("/config")
    def service_config():
        info = {"fps": config.fps, "checkpoint": config.checkpoint}
        if config.checkpoint:
            model, manifest, regimes, _, _ = runtime_for(None)
            info.update({"num_regimes": model.config.num_regimes,
                         "frame_dim": model.config.frame_dim,
                         "regime_labels": [r.label for r in regimes],
                         "metadata": manifest.get("metadata", {})})
        return info

    @app.post("/streams")
    def create_stream(body: CreateStream):
        model, _, regimes, sched, cache_config = runtime_for(body.checkpoint)
        if not 0 <= body.condition < model.config.num_regimes:
            raise HTTPException(status_code=422,
                                detail=f"condition {body.condition} outside "
                                       f"0..{model.config.num_regimes - 1}")
        seed = body.seed if body.seed is not None else int.from_bytes(os.urandom(4), "little")
        sid = uuid.uuid4().hex[:12]
        sessions[sid] = StreamSession(sid, model, regimes, sched, cache_config,
                                      body.condition, seed, config.fps,
                                      config.queue_size)
        return {"id": sid, "condition": body.condition, "seed": seed,
                "num_regimes": model.config.num_regimes,
                "frame_dim": model.config.frame_dim}

    @app.get("/streams/{stream_id}/events")
    def stream_events(stream_id: str):
        session = get_session(stream_id)
        return StreamingResponse(session.events(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache"})

    @app.post("/streams/{stream_id}/condition")
    def set_condition(stream_id: str, body: SetCondition):
        session = get_session(stream_id)
        if not 0 <= body.label < session.model.config.num_regimes:
            raise HTTPException(status_code=422,
                                detail=f"label {body.label} outside "
                                       f"0..{session.model.config.num_regimes - 1}")
        acked_at = session.switch(body.label)
        return {"label": body.label, "acknowledged_at_frame": acked_at}

    @app.get("/streams/{stream_id}/stats")
    def stream_stats(stream_id: str):
        return get_session(stream_id).stats()

    @app.delete("/streams/{stream_id}")
    def delete_stream(stream_id: str):
        session = get_session(stream_id)
        session.stop()
        del sessions[stream_id]
        return {"id": stream_id, "stopped": True}

    static_dir = config.static_dir
    if static_dir is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        static_dir = str(bundled) if bundled.is_dir() else None
    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
