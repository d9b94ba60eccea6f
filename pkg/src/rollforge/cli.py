"""Command-line entry points: train, generate, measure, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics, training
from .checkpoint import save_checkpoint
from .denoiser import Denoiser, DenoiserConfig
from .engine import RollingStream, SelfForcingStream
from .kvcache import CacheConfig
from .schedule import NoiseSchedule
from .service import ServiceConfig, create_app, load_runtime
from .world import default_regimes


def _model_args(p: argparse.ArgumentParser):
    p.add_argument("--frame-dim", type=int, default=8)
    p.add_argument("--dim-model", type=int, default=64)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)


def _cache_args(p: argparse.ArgumentParser):
    p.add_argument("--sink", type=int, default=1, help="sink frames kept forever")
    p.add_argument("--recent", type=int, default=1, help="recent-frame ring size")
    p.add_argument("--window", type=int, default=5, help="rolling window / denoise steps")


def _parse_switches(items):
    script = []
    for item in items or []:
        frame, _, label = item.partition(":")
        try:
            script.append((int(frame), int(label)))
        except ValueError:
            raise SystemExit(f"bad --switch {item!r}, expected FRAME:LABEL")
    return script


def _metadata(regimes, sched: NoiseSchedule, cache: CacheConfig,
              pretrained: bool, distilled: bool) -> dict:
    return {
        "pretrained": pretrained,
        "distilled": distilled,
        "world": [r.to_config() for r in regimes],
        "schedule": {"shift_k": sched.shift_k, "num_steps": sched.num_steps},
        "cache": {"sink_frames": cache.sink_frames, "recent_frames": cache.recent_frames,
                  "window_frames": cache.window_frames},
    }


def cmd_pretrain(args) -> int:
    config = DenoiserConfig(dim_model=args.dim_model, num_layers=args.layers,
                            num_heads=args.heads, frame_dim=args.frame_dim)
    model = Denoiser(config, seed=args.seed)
    regimes = default_regimes(args.frame_dim)
    cfg = training.PretrainConfig(steps=args.steps, batch=args.batch,
                                  seq_len=args.seq_len, lr=args.lr)
    log_path = args.log or str(Path(args.out).with_suffix("")) + ".pretrain.jsonl"
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    history = training.pretrain(model, regimes, cfg, seed=args.seed, log_path=log_path)
    sched = NoiseSchedule(num_steps=args.window)
    cache = CacheConfig(sink_frames=args.sink, recent_frames=args.recent,
                        window_frames=args.window)
    path = save_checkpoint(args.out, model,
                           _metadata(regimes, sched, cache, True, False))
    print(f"pretrained {cfg.steps} steps, loss {history[0]['loss']:.3f} -> "
          f"{history[-1]['loss']:.3f}, wrote {path}")
    return 0


def cmd_distill(args) -> int:
    model, manifest, regimes, sched, cache = load_runtime(args.checkpoint)
    fake = Denoiser(model.config)
    fake.load_state_dict(model.state_dict())
    cfg = training.TrainConfig(
        steps=args.steps, batch=args.batch, lr_generator=args.lr_gen,
        lr_fake=args.lr_fake, fake_updates_per_gen=args.fake_updates,
        n_min=args.n_min, n_max=args.n_max, eval_window=args.eval_window,
        mix_prob_sf=args.mix_prob_sf, dmd_t_range=(args.t_low, args.t_high),
        normalize_dmd=not args.no_normalize, lr_final_frac=args.lr_final_frac)
    log_path = args.log or str(Path(args.out).with_suffix("")) + ".distill.jsonl"
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    training.distill(model, fake, regimes, cfg, cache, seed=args.seed,
                     log_path=log_path,
                     pretrained=manifest["metadata"].get("pretrained", False))
    path = save_checkpoint(args.out, model, _metadata(regimes, sched, cache, True, True))
    print(f"distilled {cfg.steps} steps, wrote {path}")
    return 0


def _open_stream(args):
    model, _, regimes, sched, cache = load_runtime(args.checkpoint)
    cls = RollingStream if args.mode == "rolling" else SelfForcingStream
    return cls(model, sched, cache, args.condition, args.seed), regimes


def cmd_generate(args) -> int:
    stream, _ = _open_stream(args)
    script = dict(_parse_switches(args.switch))
    frames, conditions = [], []
    for k in range(1, args.frames + 1):
        if k in script:
            stream.switch_condition(script[k])
        frames.append(stream.next_frame())
        conditions.append(stream.condition)
    frames = np.stack(frames)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        payload = {"mode": args.mode, "seed": args.seed, "frames": frames.tolist(),
                   "conditions": conditions}
        out.write_text(json.dumps(payload) + "\n")
    else:
        out.write_bytes(frames.astype("<f4").tobytes())
    print(f"wrote {args.frames} frames to {out}")
    return 0


def cmd_bench(args) -> int:
    model, _, regimes, sched, cache = load_runtime(args.checkpoint)
    reports = {}
    pace = 1.0 / args.fps if args.fps > 0 else 0.0
    for mode, cls in (("rolling", RollingStream), ("sf", SelfForcingStream)):
        stream = cls(model, sched, cache, args.condition, args.seed)
        reports[mode] = metrics.latency_bench(stream, args.warm, args.frames,
                                              pace_s=pace).to_dict()
    ratio = reports["rolling"]["steady_latency_s"] / reports["sf"]["steady_latency_s"]
    print(json.dumps({"rolling": reports["rolling"], "sf": reports["sf"],
                      "latency_ratio_rolling_over_sf": ratio}, indent=2))
    return 0


def cmd_eval(args) -> int:
    path = Path(args.rollout)
    if not path.exists():
        print(f"rollout file not found: {path}", file=sys.stderr)
        return 1
    if path.suffix == ".json":
        payload = json.loads(path.read_text())
        frames = np.asarray(payload["frames"], dtype=np.float64)
        label = args.regime if args.regime is not None else payload.get("conditions", [0])[0]
    else:
        frames = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(
            -1, args.frame_dim).astype(np.float64)
        label = args.regime or 0
    if args.checkpoint:
        _, _, regimes, _, _ = load_runtime(args.checkpoint)
    else:
        regimes = default_regimes(frames.shape[1])
    report = metrics.drift_report(frames, regimes[label], seg_len=args.segments)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    app = create_app(ServiceConfig(checkpoint=args.checkpoint, fps=args.fps,
                                   static_dir=args.static_dir))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rollforge",
                                     description="streaming rolling-window diffusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="teacher-forced pretraining on the synthetic world")
    _model_args(p)
    _cache_args(p)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seq-len", type=int, default=27)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default=None)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("distill", help="score-difference distillation of the generator")
    p.add_argument("--checkpoint", required=True, help="pretrained checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr-gen", type=float, default=1e-4)
    p.add_argument("--lr-fake", type=float, default=4e-5)
    p.add_argument("--fake-updates", type=int, default=5)
    p.add_argument("--n-min", type=int, default=21)
    p.add_argument("--n-max", type=int, default=27)
    p.add_argument("--eval-window", type=int, default=21)
    p.add_argument("--mix-prob-sf", type=float, default=0.5)
    p.add_argument("--t-low", type=float, default=20.0)
    p.add_argument("--t-high", type=float, default=980.0)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--lr-final-frac", type=float, default=1.0,
                   help="cosine-decay both learning rates to this fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default=None)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("generate", help="write a rollout from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=["rolling", "sf"], default="rolling")
    p.add_argument("--frames", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--condition", type=int, default=0)
    p.add_argument("--switch", action="append", metavar="FRAME:LABEL",
                   help="switch condition before the given frame; repeatable")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["json", "bin"], default="json")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("bench", help="steady-state latency of rolling vs frame-by-frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--warm", type=int, default=32)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--condition", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=0.0,
                   help="pace timed passes at this rate instead of a hot loop")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("eval", help="drift report of a rollout file")
    p.add_argument("--rollout", required=True)
    p.add_argument("--segments", type=int, default=256, help="segment length")
    p.add_argument("--regime", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--frame-dim", type=int, default=8, help="for raw binary rollouts")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP streaming service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--fps", type=float, default=16.0)
    p.add_argument("--static-dir", default=None)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
