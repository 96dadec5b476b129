"""Command line entry points.

Verbs: validate-config, train-codec, train-model, generate, stream, bench.
Exit codes: 0 success, 2 usage, 3 invalid config, 4 missing/bad
checkpoint, 5 sink failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .codec import patchify, save_codebook, train_codebook, vq_encode
from .conditioning import embed_audio
from .config import default_config, load_config, save_config
from .corpus import families_from_config, synth_corpus, write_manifest
from .dsp import wav_to_mel
from .engine import Engine, load_artifacts, load_audio_query, make_sink
from .errors import CheckpointError, ConfigError, SinkError
from .generator.checkpoint import save_model
from .generator.model import MaskedTokenModel
from .generator.training import train_masked
from .service import ControlService
from .streamer import NullSink, VirtualClock, WallClock, channel_seed, outpaint_step, ChannelState, flush_channel
from .wavio import write_wav

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CHECKPOINT = 4
EXIT_SINK = 5

DEFAULT_CONFIG = os.environ.get("SOUNDLOOM_CONFIG", "configs/desk.yaml")


def _load(args):
    return load_config(args.config)


def _corpus(cfg):
    spec = families_from_config(cfg.corpus)
    if not spec:
        raise ConfigError("config has an empty corpus section")
    return synth_corpus(spec, seed=cfg.master_seed, sample_rate=cfg.stft.sample_rate)


def cmd_validate_config(args):
    cfg = _load(args)
    print(f"config ok: {args.config}")
    print(f"  grid {cfg.generator.grid[0]}x{cfg.generator.grid[1]} "
          f"({cfg.generator.cells} tokens), codebook K={cfg.codebook_size}")
    print(f"  segment {cfg.plan.segment_seconds:.0f}s, overlap "
          f"{cfg.plan.overlap_seconds:.0f}s, 8 channels")
    return EXIT_OK


def cmd_init_config(args):
    save_config(args.out, default_config())
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train_codec(args):
    cfg = _load(args)
    waves, manifest = _corpus(cfg)
    all_patches = []
    for w in waves:
        mel = wav_to_mel(w, cfg.stft)
        patches, _ = patchify(mel)
        all_patches.append(patches)
    patches = np.concatenate(all_patches, axis=0)
    print(f"training codebook K={cfg.codebook_size} on {patches.shape[0]} patches")
    cb = train_codebook(patches, cfg.codebook_size, iters=args.iters, seed=cfg.master_seed)
    out = args.out or cfg.codebook_path
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_codebook(out, cb)
    if args.manifest:
        write_manifest(args.manifest, manifest)
    print(f"codebook -> {out} (inertia {cb.inertia[0]:.1f} -> {cb.inertia[-1]:.1f}, "
          f"sha {cb.sha256()[:12]})")
    return EXIT_OK


def cmd_train_model(args):
    cfg = _load(args)
    from .codec import load_codebook

    cb = load_codebook(args.codebook or cfg.codebook_path)
    waves, _ = _corpus(cfg)
    grids, conds = [], []
    for w in waves:
        mel = wav_to_mel(w, cfg.stft)
        grids.append(vq_encode(mel, cb))
        conds.append(embed_audio(w, dim=cfg.generator.cond_dim))
    model = MaskedTokenModel(cfg.generator)
    epochs = args.epochs if args.epochs is not None else cfg.training.epochs
    print(f"training generator: {cfg.generator.blocks} blocks, dim "
          f"{cfg.generator.dim}, {len(grids)} grids, {epochs} epochs")
    report = train_masked(
        model, grids, conds=conds, epochs=epochs,
        batch_size=cfg.training.batch_size, lr=cfg.training.lr,
        cond_dropout=cfg.training.cond_dropout, seed=cfg.master_seed,
    )
    out = args.out or cfg.model_path
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_model(out, model, codec_sha=cb.sha256())
    loss_csv = args.loss_csv or os.path.splitext(out)[0] + "_loss.csv"
    report.write_csv(loss_csv)
    print(f"model -> {out} ({model.num_params} params), loss "
          f"{report.initial_loss:.3f} -> {report.epoch_losses[-1]:.3f}, "
          f"trace -> {loss_csv}")
    return EXIT_OK


def cmd_generate(args):
    cfg = _load(args)
    codebook, model = load_artifacts(cfg)
    audio_cond = load_audio_query(cfg)
    spec = cfg.channels[args.channel]
    prompt = args.prompt or spec.prompt
    ch = ChannelState(args.channel, prompt, cfg_scale=spec.cfg_scale)
    import dataclasses

    plan = cfg.plan
    seed = channel_seed(args.seed, args.channel, 0)
    full_plan = plan if plan.vocode == "full" else dataclasses.replace(plan, vocode="full")
    _, audio = outpaint_step(ch, model, codebook, cfg.stft, full_plan,
                             audio_cond=audio_cond, seed=seed,
                             vocoder_iters=cfg.vocoder_iterations)
    audio = np.concatenate([audio, flush_channel(ch)])
    write_wav(args.out, audio, cfg.stft.sample_rate)
    print(f"wrote {args.out}: {audio.shape[0]} samples "
          f"({audio.shape[0]/cfg.stft.sample_rate:.1f} s), prompt {prompt!r}, "
          f"seed {args.seed}")
    return EXIT_OK


def cmd_stream(args):
    cfg = _load(args)
    codebook, model = load_artifacts(cfg)
    audio_cond = load_audio_query(cfg)
    engine = Engine(cfg, codebook, model, audio_cond=audio_cond)

    sink_spec = dict(cfg.sink)
    if args.out_dir:
        sink_spec = {"kind": "per_channel", "path": args.out_dir}
    sink = make_sink(sink_spec)
    clock = VirtualClock() if args.clock == "virtual" else WallClock()
    max_windows = args.windows
    if max_windows is None and args.duration is not None:
        max_windows = int(args.duration / cfg.plan.window_seconds)

    events_fh = open(args.events, "w") if args.events else None

    def event_cb(ev):
        if events_fh is not None:
            events_fh.write(json.dumps(ev) + "\n")
            events_fh.flush()

    service = None
    if args.control_port is not None:
        service = ControlService(engine, port=args.control_port,
                                 static_root=args.console_dir)
        service.start()
        print(f"control service at {service.url}", flush=True)

    try:
        engine.start(sink=sink, clock=clock, max_windows=max_windows,
                     event_cb=event_cb)
        stats = engine.join()
    except KeyboardInterrupt:
        engine.stop()
        stats = engine.join()
    finally:
        if service is not None:
            service.stop()
        if events_fh is not None:
            events_fh.close()
    report = stats.snapshot()
    if isinstance(sink, NullSink):
        report["digests"] = sink.digests()
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_bench(args):
    cfg = _load(args)
    codebook, model = load_artifacts(cfg)
    audio_cond = load_audio_query(cfg)
    engine = Engine(cfg, codebook, model, audio_cond=audio_cond)
    sink = NullSink()
    t0 = time.perf_counter()
    stats = engine.run_blocking(sink=sink, clock=WallClock(), max_windows=args.windows)
    wall = time.perf_counter() - t0
    audio_seconds = stats.windows * cfg.plan.window_seconds * len(engine.channels)
    snapshot = stats.snapshot()
    report = {
        "windows": stats.windows,
        "channels": len(engine.channels),
        "audio_seconds": audio_seconds,
        "wall_seconds": round(wall, 3),
        "rtf": round(audio_seconds / wall, 3),
        "mean_latency_ms": [c["mean_latency_ms"] for c in snapshot["channels"]],
        "underruns": stats.total_underruns,
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="soundloom",
                                description="eight-channel generative sound engine")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)

    def add(name, fn, **kwargs):
        sp = sub.add_parser(name, **kwargs)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", default=DEFAULT_CONFIG,
                        help="engine config path (env SOUNDLOOM_CONFIG overrides)")
        return sp

    add("validate-config", cmd_validate_config, help="check a config and exit")

    sp = sub.add_parser("init-config", help="write the default config")
    sp.set_defaults(fn=cmd_init_config)
    sp.add_argument("--out", default="configs/desk.yaml")

    sp = add("train-codec", cmd_train_codec, help="fit the patch codebook")
    sp.add_argument("--iters", type=int, default=25)
    sp.add_argument("--out", default=None, help="codebook path override")
    sp.add_argument("--manifest", default=None, help="write corpus manifest JSON here")

    sp = add("train-model", cmd_train_model, help="train the masked generator")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--codebook", default=None)
    sp.add_argument("--out", default=None, help="model path override")
    sp.add_argument("--loss-csv", default=None)

    sp = add("generate", cmd_generate, help="decode one segment to a WAV")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--channel", type=int, default=0)
    sp.add_argument("--prompt", default=None)
    sp.add_argument("--out", default="segment.wav")

    sp = add("stream", cmd_stream, help="run the continuous eight-channel stream")
    sp.add_argument("--windows", type=int, default=None)
    sp.add_argument("--duration", type=float, default=None, help="seconds of stream")
    sp.add_argument("--clock", choices=("wall", "virtual"), default="wall")
    sp.add_argument("--control-port", type=int, default=None)
    sp.add_argument("--console-dir", default=None,
                    help="serve the operator console from this directory")
    sp.add_argument("--out-dir", default=None, help="per-channel WAV directory")
    sp.add_argument("--events", default=None, help="write JSONL events here")

    sp = add("bench", cmd_bench, help="measure 8-channel throughput")
    sp.add_argument("--windows", type=int, default=3)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except SinkError as e:
        print(f"sink error: {e}", file=sys.stderr)
        return EXIT_SINK


if __name__ == "__main__":
    sys.exit(main())
