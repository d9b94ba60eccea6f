import { FrameEvent } from './types.js';

export const REGIME_COLORS = [
  '#4fc3f7', '#ffb74d', '#81c784', '#e57373',
  '#ba68c8', '#fff176', '#a1887f', '#90a4ae',
];

export function regimeColor(label: number): string {
  return REGIME_COLORS[label % REGIME_COLORS.length];
}

interface TrailPoint {
  x: number;
  y: number;
  condition: number;
  index: number;
  switched: boolean; // condition changed relative to the previous point
  breakBefore: boolean; // reconnect boundary, trail should not connect
}

// 2-D projection trail: the last few hundred frames as a fading
// polyline, colored by the active regime, with ring markers where the
// regime switched and a gap marker at reconnect boundaries.
export class TrailView {
  private points: TrailPoint[] = [];
  private pendingBreak = false;
  private ctx: CanvasRenderingContext2D;
  private bound = 1;

  constructor(private canvas: HTMLCanvasElement, private maxPoints = 512) {
    this.ctx = canvas.getContext('2d')!;
  }

  push(event: FrameEvent): void {
    const prev = this.points[this.points.length - 1];
    this.points.push({
      x: event.projection_2d[0],
      y: event.projection_2d[1],
      condition: event.condition,
      index: event.frame_index,
      switched: prev !== undefined && prev.condition !== event.condition,
      breakBefore: this.pendingBreak,
    });
    this.pendingBreak = false;
    if (this.points.length > this.maxPoints) this.points.shift();
  }

  // Called when the client reconnected: the next point starts a new
  // segment instead of drawing a long stitch across the gap.
  noteSessionBreak(): void {
    this.pendingBreak = true;
  }

  get pointCount(): number {
    return this.points.length;
  }

  draw(): void {
    const { width, height } = this.canvas;
    const ctx = this.ctx;
    ctx.clearRect(0, 0, width, height);
    if (this.points.length === 0) return;

    // symmetric bounds around the origin: the world is zero-mean, so
    // this keeps the view centered and stable; only grow smoothly
    let peak = 1e-6;
    for (const p of this.points) {
      peak = Math.max(peak, Math.abs(p.x), Math.abs(p.y));
    }
    this.bound = Math.max(peak * 1.15, this.bound * 0.995, 0.5);
    const scale = Math.min(width, height) / (2 * this.bound);
    const toX = (x: number) => width / 2 + x * scale;
    const toY = (y: number) => height / 2 - y * scale;

    // axis cross
    ctx.strokeStyle = '#2a2a31';
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(0, height / 2);
    ctx.lineTo(width, height / 2);
    ctx.moveTo(width / 2, 0);
    ctx.lineTo(width / 2, height);
    ctx.stroke();

    const n = this.points.length;
    ctx.lineWidth = 1.5;
    for (let i = 1; i < n; i++) {
      const a = this.points[i - 1];
      const b = this.points[i];
      if (b.breakBefore) continue;
      ctx.globalAlpha = 0.12 + 0.88 * (i / n);
      ctx.strokeStyle = regimeColor(b.condition);
      ctx.beginPath();
      ctx.moveTo(toX(a.x), toY(a.y));
      ctx.lineTo(toX(b.x), toY(b.y));
      ctx.stroke();
    }
    ctx.globalAlpha = 1;

    // switch and reconnect markers
    for (const p of this.points) {
      if (!p.switched && !p.breakBefore) continue;
      ctx.beginPath();
      ctx.arc(toX(p.x), toY(p.y), 6, 0, 2 * Math.PI);
      ctx.strokeStyle = p.breakBefore ? '#ffffff' : regimeColor(p.condition);
      ctx.lineWidth = 2;
      ctx.stroke();
    }

    // head dot
    const head = this.points[n - 1];
    ctx.beginPath();
    ctx.arc(toX(head.x), toY(head.y), 4, 0, 2 * Math.PI);
    ctx.fillStyle = regimeColor(head.condition);
    ctx.fill();
    ctx.strokeStyle = '#fff';
    ctx.lineWidth = 1;
    ctx.stroke();

    ctx.fillStyle = '#8a8a93';
    ctx.font = '11px system-ui';
    ctx.textAlign = 'left';
    ctx.fillText(`±${this.bound.toFixed(2)}`, 6, 14);
  }
}
