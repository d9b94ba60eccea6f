// Wire types for the rollforge streaming service. Shapes mirror the
// JSON the server sends; field names are the server's, not ours.

export interface FrameEvent {
  frame_index: number;
  latent: number[];
  projection_2d: [number, number];
  condition: number;
  emit_latency_ms: number;
  dropped: number;
}

export interface SessionInfo {
  id: string;
  condition: number;
  seed: number;
  num_regimes: number;
  frame_dim: number;
}

export interface ServiceInfo {
  fps: number;
  checkpoint: string | null;
  num_regimes?: number;
  frame_dim?: number;
  regime_labels?: number[];
}

export interface PerfSnapshot {
  steady_fps: number;
  steady_latency_s: number;
  warmup_passes: number;
}

export interface DriftSnapshot {
  fd_first: number;
  fd_last: number;
  delta_drift: number;
  flicker: number;
  segments: [number, number][];
}

export interface StatsSnapshot {
  id: string;
  frames_emitted: number;
  condition: number;
  perf: PerfSnapshot | null;
  drift: DriftSnapshot | null;
}

export interface SteerAck {
  label: number;
  acknowledged_at_frame: number;
}
