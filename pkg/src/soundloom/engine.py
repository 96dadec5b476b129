"""Engine assembly: checkpoints + config + a running stream behind a control bus.

The control bus validates operator events, queues them for the streamer
(which drains them at window boundaries only), and fans stream events
out to any number of subscribers (stats feed, JSONL log, the console's
push channel).
"""

from __future__ import annotations

import queue
import threading

import numpy as np

from .codec import Codebook, load_codebook, vq_decode
from .conditioning import CondEmbedding, embed_audio
from .config import EngineConfig
from .dsp import Waveform
from .errors import CheckpointError, ConfigError, SinkError
from .generator.checkpoint import load_model
from .generator.model import MaskedTokenModel
from .streamer import (
    AudioSink,
    ChannelState,
    DeviceSink,
    InterleavedWavSink,
    NullSink,
    PerChannelWavSink,
    StreamStats,
    WallClock,
    run_stream,
)
from .wavio import read_wav

CONTROL_KINDS = ("set_prompt", "set_cfg_scale", "pause", "resume", "snapshot")


def load_artifacts(cfg: EngineConfig):
    """Load the codebook and model checkpoints and verify they were trained together."""
    codebook = load_codebook(cfg.codebook_path)
    model = load_model(cfg.model_path, expect_codec_sha=codebook.sha256())
    if model.config.grid != tuple(cfg.generator.grid):
        raise CheckpointError(
            f"model grid {model.config.grid} does not match config grid "
            f"{tuple(cfg.generator.grid)}"
        )
    return codebook, model


def load_audio_query(cfg: EngineConfig) -> CondEmbedding | None:
    if not cfg.audio_query_path:
        return None
    data, rate = read_wav(cfg.audio_query_path)
    if data.ndim > 1:
        data = data.mean(axis=1)
    return embed_audio(Waveform(data, rate))


def make_sink(spec: dict) -> AudioSink:
    kind = spec.get("kind", "per_channel")
    if kind == "per_channel":
        return PerChannelWavSink(spec.get("path", "out"), fmt=spec.get("format", "float32"))
    if kind == "interleaved":
        return InterleavedWavSink(spec.get("path", "out.wav"), fmt=spec.get("format", "float32"))
    if kind == "null":
        return NullSink()
    if kind == "device":
        return DeviceSink(device=spec.get("device"))
    raise SinkError(f"unknown sink kind {kind!r}")


def validate_control_event(event: dict, num_channels: int = 8) -> dict:
    """Normalize and validate an operator event; raises ConfigError with a reason."""
    if not isinstance(event, dict):
        raise ConfigError("control event must be an object")
    kind = event.get("kind")
    if kind not in CONTROL_KINDS:
        raise ConfigError(f"unknown control kind {kind!r}")
    out = {"kind": kind}
    if kind in ("set_prompt", "set_cfg_scale"):
        cid = event.get("channel_id")
        if not isinstance(cid, int) or not 0 <= cid < num_channels:
            raise ConfigError(f"channel_id must be an int in [0, {num_channels})")
        out["channel_id"] = cid
        payload = event.get("payload")
        if kind == "set_prompt":
            if not isinstance(payload, str) or not payload:
                raise ConfigError("set_prompt payload must be a non-empty string")
        else:
            try:
                payload = float(payload)
            except (TypeError, ValueError):
                raise ConfigError("set_cfg_scale payload must be a number") from None
            if payload < 0:
                raise ConfigError("cfg scale must be >= 0")
        out["payload"] = payload
    return out


class Engine:
    """A configured engine with a controllable stream lifecycle."""

    def __init__(self, cfg: EngineConfig, codebook: Codebook,
                 model: MaskedTokenModel, audio_cond: CondEmbedding | None = None):
        self.cfg = cfg
        self.codebook = codebook
        self.model = model
        self.audio_cond = audio_cond
        self.channels = [
            ChannelState(i, spec.prompt, cfg_scale=spec.cfg_scale)
            for i, spec in enumerate(cfg.channels)
        ]
        self.control_queue: queue.Queue = queue.Queue()
        self.stop_event = threading.Event()
        self.pause_flag = threading.Event()
        self.stats: StreamStats | None = None
        self._subscribers: list[queue.Queue] = []
        self._sub_lock = threading.Lock()
        self._thread: threading.Thread | None = None
        self._stream_error: BaseException | None = None

    # ---- events ----

    def subscribe(self, maxsize: int = 256) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=maxsize)
        with self._sub_lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue):
        with self._sub_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def broadcast(self, event: dict):
        with self._sub_lock:
            subs = list(self._subscribers)
        for q in subs:
            try:
                q.put_nowait(event)
            except queue.Full:  # slow consumer: drop oldest, keep the feed alive
                try:
                    q.get_nowait()
                except queue.Empty:
                    pass
                try:
                    q.put_nowait(event)
                except queue.Full:
                    pass

    # ---- control ----

    def submit_control(self, event: dict) -> dict:
        ev = validate_control_event(event, num_channels=len(self.channels))
        if ev["kind"] == "pause":
            self.pause_flag.set()
            self.broadcast({"event": "paused"})
            return {"accepted": True, "applied": "immediately"}
        if ev["kind"] == "resume":
            self.pause_flag.clear()
            self.broadcast({"event": "resumed"})
            return {"accepted": True, "applied": "immediately"}
        self.control_queue.put(ev)
        return {"accepted": True, "applied": "next_boundary"}

    def state(self) -> dict:
        stats = self.stats.snapshot() if self.stats else None
        per_channel = []
        for i, ch in enumerate(self.channels):
            entry = {
                "channel_id": ch.channel_id,
                "prompt": ch.prompt,
                "cfg_scale": ch.cfg_scale,
                "segments_emitted": ch.segments_emitted,
                "playback_cursor": ch.playback_cursor,
            }
            if stats is not None:
                entry.update(stats["channels"][i])
            per_channel.append(entry)
        return {
            "version": 1,
            "running": self.running,
            "paused": self.pause_flag.is_set(),
            "windows": stats["windows"] if stats else 0,
            "channels": per_channel,
        }

    def last_mel(self, channel_id: int) -> np.ndarray | None:
        ch = self.channels[channel_id]
        if ch.last_grid is None:
            return None
        return vq_decode(ch.last_grid, self.codebook, self.cfg.stft).data

    # ---- lifecycle ----

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def start(self, sink: AudioSink | None = None, clock=None,
              max_windows: int | None = None, event_cb=None,
              buffer_ahead: int = 2):
        if self.running:
            raise RuntimeError("stream already running")
        sink = sink if sink is not None else make_sink(self.cfg.sink)
        clock = clock or WallClock()
        self.stop_event.clear()

        def cb(event):
            self.broadcast(event)
            if event_cb is not None:
                event_cb(event)

        from .streamer import ChannelStats

        self.stats = StreamStats(channels=[ChannelStats() for _ in self.channels])

        def worker():
            try:
                run_stream(
                    self.channels, self.model, self.codebook, self.cfg.stft,
                    self.cfg.plan, sink, clock=clock, master_seed=self.cfg.master_seed,
                    audio_cond=self.audio_cond, max_windows=max_windows,
                    stop_event=self.stop_event, control_queue=self.control_queue,
                    event_cb=cb, vocoder_iters=self.cfg.vocoder_iterations,
                    workers=self.cfg.workers, pause_flag=self.pause_flag,
                    buffer_ahead=buffer_ahead, stats=self.stats,
                )
            except BaseException as e:  # surfaced via join()
                self._stream_error = e

        self._thread = threading.Thread(target=worker, name="soundloom-stream", daemon=True)
        self._thread.start()

    def run_blocking(self, **kwargs) -> StreamStats:
        self.start(**kwargs)
        return self.join()

    def stop(self):
        self.stop_event.set()
        self.pause_flag.clear()

    def join(self, timeout: float | None = None) -> StreamStats:
        if self._thread is not None:
            self._thread.join(timeout)
        if self._stream_error is not None:
            raise self._stream_error
        return self.stats
