// Shared test utilities: a polling waiter and a recording canvas
// stand-in so the views can run without a DOM.

export function waitFor(pred: () => boolean, ms = 10000): Promise<void> {
  return new Promise((resolve, reject) => {
    const t0 = Date.now();
    const tick = () => {
      if (pred()) return resolve();
      if (Date.now() - t0 > ms) return reject(new Error('waitFor timed out'));
      setTimeout(tick, 5);
    };
    tick();
  });
}

export interface FakeCanvas {
  canvas: HTMLCanvasElement;
  ops: string[];
}

// Proxy-based 2d context: method calls are recorded by name and
// property sets as "prop=value". Enough for the draw paths, which
// never read pixels back.
export function fakeCanvas(width: number, height: number): FakeCanvas {
  const ops: string[] = [];
  const ctx = new Proxy(
    {},
    {
      get(_target, prop) {
        if (prop === 'canvas') return canvas;
        return (..._args: unknown[]) => {
          ops.push(String(prop));
        };
      },
      set(_target, prop, value) {
        ops.push(`${String(prop)}=${String(value)}`);
        return true;
      },
    },
  );
  const canvas = {
    width,
    height,
    getContext: () => ctx,
  } as unknown as HTMLCanvasElement;
  return { canvas, ops };
}
