interface Sample {
  t: number;
  v: number;
}

export interface ChartOptions {
  label: string;
  color: string;
  maxSamples?: number;
  format?: (v: number) => string;
}

// Minimal time-series line chart for the telemetry panel. Values are
// non-negative (drift deltas, latencies), so the y axis is pinned at
// zero and only the top adapts.
export class LineChart {
  private samples: Sample[] = [];
  private ctx: CanvasRenderingContext2D;
  private readonly maxSamples: number;
  private readonly fmt: (v: number) => string;

  constructor(private canvas: HTMLCanvasElement, private opts: ChartOptions) {
    this.ctx = canvas.getContext('2d')!;
    this.maxSamples = opts.maxSamples ?? 180;
    this.fmt = opts.format ?? ((v) => v.toPrecision(3));
  }

  push(v: number): void {
    if (!Number.isFinite(v) || v < 0) return;
    this.samples.push({ t: Date.now(), v });
    if (this.samples.length > this.maxSamples) this.samples.shift();
  }

  latest(): number | undefined {
    return this.samples[this.samples.length - 1]?.v;
  }

  get count(): number {
    return this.samples.length;
  }

  draw(): void {
    const { width, height } = this.canvas;
    const ctx = this.ctx;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = '#8a8a93';
    ctx.font = '11px system-ui';
    ctx.textAlign = 'left';
    ctx.fillText(this.opts.label, 6, 12);

    if (this.samples.length < 2) {
      ctx.fillText('waiting for samples', 6, height / 2);
      return;
    }

    const top = 18;
    const plotH = height - top - 6;
    let vMax = 0;
    for (const s of this.samples) vMax = Math.max(vMax, s.v);
    if (vMax <= 0) vMax = 1;
    const n = this.samples.length;
    const toX = (i: number) => 6 + (i / (this.maxSamples - 1)) * (width - 12);
    const toY = (v: number) => top + plotH * (1 - v / (vMax * 1.1));

    ctx.strokeStyle = '#2a2a31';
    ctx.beginPath();
    ctx.moveTo(6, toY(0));
    ctx.lineTo(width - 6, toY(0));
    ctx.stroke();

    ctx.strokeStyle = this.opts.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    for (let i = 0; i < n; i++) {
      const x = toX(i);
      const y = toY(this.samples[i].v);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();

    ctx.fillStyle = this.opts.color;
    ctx.textAlign = 'right';
    ctx.fillText(this.fmt(this.samples[n - 1].v), width - 6, 12);
  }
}
