import { LineChart } from './charts.js';
import { HeatmapView } from './heatmap.js';
import { FrameRing } from './ring.js';
import { StreamClient } from './sse.js';
import { TrailView } from './trail.js';
import { regimeColor } from './trail.js';
import { ServiceInfo, StatsSnapshot } from './types.js';

const STALE_STATS_MS = 5000;
const STATS_POLL_MS = 1000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function fetchConfig(): Promise<ServiceInfo> {
  while (true) {
    try {
      const res = await fetch('/config');
      if (res.ok) return (await res.json()) as ServiceInfo;
    } catch {
      // server not up yet, keep trying
    }
    el('banner').hidden = false;
    el('banner').textContent = 'waiting for service...';
    await new Promise((r) => setTimeout(r, 2000));
  }
}

function setConnState(state: string, detail: string): void {
  const badge = el('conn-state');
  badge.textContent = detail ? `${state} (${detail})` : state;
  badge.className = `badge ${state}`;
  const banner = el('banner');
  if (state === 'reconnecting' || state === 'connecting') {
    banner.hidden = false;
    banner.textContent = detail ? `${state}: ${detail}` : `${state}...`;
  } else {
    banner.hidden = true;
  }
}

async function boot(): Promise<void> {
  const info = await fetchConfig();
  el('banner').hidden = true;
  const numRegimes = info.num_regimes ?? 4;

  const ring = new FrameRing(2048);
  const trail = new TrailView(el<HTMLCanvasElement>('trail'));
  const heatmap = new HeatmapView(el<HTMLCanvasElement>('heatmap'));
  const driftChart = new LineChart(el<HTMLCanvasElement>('drift-chart'), {
    label: 'delta drift',
    color: '#ffb74d',
  });
  const latencyChart = new LineChart(el<HTMLCanvasElement>('latency-chart'), {
    label: 'steady latency',
    color: '#4fc3f7',
    format: (v) => `${v.toFixed(2)} ms`,
  });

  let sessionsSeen = 0;
  const client = new StreamClient('', {
    onFrame: (event) => ring.push(event),
    onState: setConnState,
    onSession: (session) => {
      sessionsSeen += 1;
      if (sessionsSeen > 1) trail.noteSessionBreak();
      el('session-id').textContent = session.id;
      markActiveButton(session.condition);
    },
  });

  // steer controls
  const buttonBox = el('steer-buttons');
  const steerError = el('steer-error');
  const buttons: HTMLButtonElement[] = [];

  function markActiveButton(label: number): void {
    buttons.forEach((b, i) => b.classList.toggle('active', i === label));
  }

  async function steer(label: number): Promise<void> {
    steerError.textContent = '';
    try {
      const ack = await client.steer(label);
      markActiveButton(ack.label);
    } catch (err) {
      steerError.textContent = err instanceof Error ? err.message : String(err);
    }
  }

  for (let r = 0; r < numRegimes; r++) {
    const button = document.createElement('button');
    button.textContent = `regime ${r}`;
    button.style.borderColor = regimeColor(r);
    button.addEventListener('click', () => void steer(r));
    buttonBox.appendChild(button);
    buttons.push(button);
  }
  const freeInput = el<HTMLInputElement>('steer-free');
  el('steer-send').addEventListener('click', () => {
    const label = Number(freeInput.value);
    void steer(Number.isInteger(label) ? label : -1);
  });

  // render loop, decoupled from the SSE consumer by the ring
  let cursor = 0;
  function renderLoop(): void {
    const fresh = ring.since(cursor);
    if (fresh.length) {
      for (const event of fresh) {
        trail.push(event);
        heatmap.push(event.latent);
      }
      cursor = ring.latestIndex;
      trail.draw();
      const head = ring.latest()!;
      el('stat-frame').textContent = String(head.frame_index);
      el('stat-emit').textContent = `${head.emit_latency_ms.toFixed(2)} ms`;
      if (head.dropped > 0) {
        el('stat-dropped').textContent = `+${head.dropped} dropped`;
      }
    }
    requestAnimationFrame(renderLoop);
  }
  requestAnimationFrame(renderLoop);

  // telemetry polling at 1 Hz; panel grays out when stats go stale
  let lastStatsAt = 0;
  setInterval(() => {
    void (async () => {
      const session = client.session;
      if (session) {
        try {
          const res = await fetch(`/streams/${session.id}/stats`);
          if (res.ok) {
            const stats = (await res.json()) as StatsSnapshot;
            lastStatsAt = Date.now();
            if (stats.drift) driftChart.push(stats.drift.delta_drift);
            if (stats.perf) latencyChart.push(stats.perf.steady_latency_s * 1000);
            el('stat-emitted').textContent = String(stats.frames_emitted);
            el('stat-fps').textContent = stats.perf
              ? stats.perf.steady_fps.toFixed(1)
              : '-';
            el('stat-flicker').textContent = stats.drift
              ? stats.drift.flicker.toPrecision(3)
              : '-';
            driftChart.draw();
            latencyChart.draw();
          }
        } catch {
          // poll failure: stale check below handles the visuals
        }
      }
      el('telemetry').classList.toggle(
        'stale',
        Date.now() - lastStatsAt > STALE_STATS_MS,
      );
    })();
  }, STATS_POLL_MS);

  void client.start();
  window.addEventListener('beforeunload', () => client.stop());
}

void boot();
