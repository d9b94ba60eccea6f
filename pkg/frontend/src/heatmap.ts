// Scrolling D-by-time latent heatmap: one pixel column per frame,
// negative values in blue, positive in red, brightness by magnitude.

export function divergingColor(v: number): string {
  const t = Math.max(-1, Math.min(1, v));
  const m = Math.abs(t);
  const base = 24;
  if (t >= 0) {
    return `rgb(${base + Math.round(226 * m)}, ${base + Math.round(64 * m)}, ${base})`;
  }
  return `rgb(${base}, ${base + Math.round(96 * m)}, ${base + Math.round(226 * m)})`;
}

export class HeatmapView {
  private ctx: CanvasRenderingContext2D;
  private scale = 1;
  columnsDrawn = 0;

  constructor(private canvas: HTMLCanvasElement) {
    this.ctx = canvas.getContext('2d')!;
    this.ctx.fillStyle = '#181818';
    this.ctx.fillRect(0, 0, canvas.width, canvas.height);
  }

  push(latent: number[]): void {
    const { width, height } = this.canvas;
    const d = latent.length;
    if (d === 0) return;
    // normalize against a slowly decaying peak so one spike does not
    // flatten the rest of the strip forever
    let peak = 1e-6;
    for (const v of latent) peak = Math.max(peak, Math.abs(v));
    this.scale = Math.max(peak, this.scale * 0.998);

    this.ctx.drawImage(this.canvas, -1, 0);
    const cell = height / d;
    for (let j = 0; j < d; j++) {
      this.ctx.fillStyle = divergingColor(latent[j] / this.scale);
      this.ctx.fillRect(width - 1, Math.floor(j * cell), 1, Math.ceil(cell));
    }
    this.columnsDrawn += 1;
  }
}
