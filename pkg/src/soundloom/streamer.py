"""Continuous multi-channel generation by token-level outpainting.

Each 10 s segment shares its first half with the previous segment's
second half at the token level; only the suffix is re-decoded. Because
the phaseless vocoder is not phase-continuous across independently
rendered segments, every emission holds back a short tail
(`crossfade_seconds`) and the next emission opens by blending that tail
with the new segment's rendering of the same timeline span. The emitted
stream is therefore gapless and click-free: 10 s for the first segment,
exactly 5 s per segment after that, with the held-back tail flushed on
stop.

One generation worker per channel may run concurrently over shared
immutable weights; the emitter writes windows in channel order so sink
bytes are deterministic. Control mutations land only at window
boundaries.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .codec import PATCH, Codebook, TokenGrid, vq_decode
from .conditioning import CondEmbedding, embed_text
from .dsp import StftConfig, Waveform, griffin_lim, log_expand, _filterbank_pinv
from .errors import ConfigError, SinkError
from .generator.model import MaskedTokenModel
from .generator.sampling import MaskSchedule, iterative_decode
from .wavio import WavWriter


@dataclass(frozen=True)
class OutpaintPlan:
    """Segment geometry: token columns per segment, shared-prefix width, timing."""

    segment_columns: int = 60
    overlap_columns: int = 30
    segment_seconds: float = 10.0
    overlap_seconds: float = 5.0
    crossfade_seconds: float = 0.25
    vocode: str = "partial"  # "partial" | "full"

    def __post_init__(self):
        if not 0 < self.overlap_columns < self.segment_columns:
            raise ConfigError(
                f"need 0 < overlap_columns < segment_columns, got "
                f"{self.overlap_columns} / {self.segment_columns}"
            )
        if not 0 < self.overlap_seconds < self.segment_seconds:
            raise ConfigError("overlap_seconds must lie inside the segment")
        if self.crossfade_seconds < 0 or self.crossfade_seconds > self.overlap_seconds:
            raise ConfigError("crossfade_seconds must lie inside the overlap")
        if self.vocode not in ("partial", "full"):
            raise ConfigError(f"vocode must be 'partial' or 'full', got {self.vocode!r}")

    @property
    def new_columns(self) -> int:
        return self.segment_columns - self.overlap_columns

    @property
    def window_seconds(self) -> float:
        return self.segment_seconds - self.overlap_seconds

    def samples_per_column(self, cfg: StftConfig) -> int:
        return cfg.hop_size * PATCH

    def segment_samples(self, cfg: StftConfig) -> int:
        return self.segment_columns * self.samples_per_column(cfg)

    def overlap_samples(self, cfg: StftConfig) -> int:
        return self.overlap_columns * self.samples_per_column(cfg)

    def crossfade_samples(self, cfg: StftConfig) -> int:
        return int(round(self.crossfade_seconds * cfg.sample_rate))

    def validate_against(self, cfg: StftConfig, grid: tuple[int, int]):
        if grid[1] != self.segment_columns:
            raise ConfigError(
                f"plan segment_columns {self.segment_columns} != grid T {grid[1]}"
            )
        expected = self.segment_seconds * cfg.sample_rate
        actual = self.segment_samples(cfg)
        if abs(actual - expected) > cfg.hop_size * PATCH:
            raise ConfigError(
                f"segment geometry mismatch: {actual} samples from tokens vs "
                f"{expected:.0f} from segment_seconds"
            )
        if abs(self.overlap_seconds * self.segment_columns
               - self.segment_seconds * self.overlap_columns) > 1e-6:
            raise ConfigError("overlap_seconds inconsistent with overlap_columns")


@dataclass
class ChannelState:
    """Everything one output channel carries between segments."""

    channel_id: int
    prompt: str
    cfg_scale: float = 1.5
    last_grid: TokenGrid | None = None
    segments_emitted: int = 0
    playback_cursor: int = 0
    pending_tail: np.ndarray | None = None
    text_cond: CondEmbedding | None = None

    def __post_init__(self):
        if self.cfg_scale < 0:
            raise ValueError(f"cfg_scale must be >= 0, got {self.cfg_scale}")
        if self.text_cond is None and self.prompt:
            self.text_cond = embed_text(self.prompt)

    def set_prompt(self, prompt: str):
        self.text_cond = embed_text(prompt)  # validates non-empty first
        self.prompt = prompt

    def set_cfg_scale(self, t: float):
        if t < 0:
            raise ValueError(f"cfg_scale must be >= 0, got {t}")
        self.cfg_scale = float(t)


def crossfade(tail: Waveform, head: Waveform, length: int, law: str = "linear") -> Waveform:
    """Blend the first `length` samples of two aligned renderings.

    Linear law: tail + u*(head - tail), exact pass-through when the
    inputs are identical. Equal-power law: tail*cos(theta) + head*sin(theta)
    with theta = (pi/2)*(i/length), energy-preserving for uncorrelated inputs.
    """
    if tail.sample_rate != head.sample_rate:
        raise ValueError("crossfade inputs must share a sample rate")
    if length > len(tail) or length > len(head):
        raise ValueError(
            f"fade length {length} exceeds an input ({len(tail)}, {len(head)})"
        )
    out = _blend(tail.samples[:length], head.samples[:length], law)
    return Waveform(out, tail.sample_rate)


def _blend(tail: np.ndarray, head: np.ndarray, law: str) -> np.ndarray:
    n = tail.shape[0]
    theta = 0.5 * np.pi * (np.arange(n) / n)
    if law == "linear":
        u = np.arange(n) / n
        return tail + u * (head - tail)
    if law == "equal_power":
        return tail * np.cos(theta) + head * np.sin(theta)
    raise ValueError(f"unknown crossfade law {law!r}")


def channel_seed(master_seed: int, channel_id: int, segment_index: int) -> np.random.SeedSequence:
    """Independent, reproducible randomness per (channel, segment)."""
    return np.random.SeedSequence(entropy=master_seed,
                                  spawn_key=(channel_id, segment_index))


def _vocode_columns(grid: TokenGrid, codebook: Codebook, cfg: StftConfig,
                    start_col: int, iterations: int, seed) -> np.ndarray:
    """Griffin-Lim render of token columns [start_col:]; returns their samples."""
    mel = vq_decode(grid, codebook, cfg)
    data = mel.data[:, start_col * PATCH :]
    linear = _filterbank_pinv(cfg) @ log_expand(data)
    np.maximum(linear, 0.0, out=linear)
    x = griffin_lim(linear, cfg, iterations=iterations, seed=seed)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return x


def outpaint_step(ch: ChannelState, model: MaskedTokenModel, codebook: Codebook,
                  stft_cfg: StftConfig, plan: OutpaintPlan,
                  audio_cond: CondEmbedding | None = None,
                  seed=0, vocoder_iters: int = 32,
                  schedule: MaskSchedule | None = None) -> tuple[TokenGrid, np.ndarray]:
    """Generate one segment for `ch` and return (grid, newly emitted samples).

    The first segment decodes from a fully masked grid and emits
    segment_seconds minus the crossfade holdback; later segments copy the
    previous grid's last `overlap_columns` token columns into the prefix,
    decode the rest with the prefix fixed, and emit exactly
    `window_seconds` of audio opening with the seam blend. Mutates `ch`.
    """
    F, T = model.config.grid
    plan.validate_against(stft_cfg, (F, T))
    if ch.last_grid is not None and ch.last_grid.mask.any():
        raise ValueError("previous grid still has masked cells")

    ov = plan.overlap_columns
    if ch.last_grid is None:
        init = TokenGrid.fully_masked((F, T))
    else:
        indices = np.zeros((F, T), dtype=np.int32)
        mask = np.ones((F, T), dtype=bool)
        indices[:, :ov] = ch.last_grid.indices[:, T - ov :]
        mask[:, :ov] = False
        init = TokenGrid(indices, mask)

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    decode_ss, gl_ss = ss.spawn(2)
    conds = {}
    if ch.text_cond is not None:
        conds["text"] = ch.text_cond
    if audio_cond is not None:
        conds["audio"] = audio_cond
    grid = iterative_decode(model, init, conds=conds, t=ch.cfg_scale,
                            schedule=schedule, seed=decode_ss)

    col = plan.samples_per_column(stft_cfg)
    seg = plan.segment_samples(stft_cfg)
    half = plan.overlap_samples(stft_cfg)
    xfade = plan.crossfade_samples(stft_cfg)

    if ch.last_grid is None or ch.pending_tail is None:
        audio = _vocode_columns(grid, codebook, stft_cfg, 0, vocoder_iters, gl_ss)
        emitted = audio[: seg - xfade]
        pending = audio[seg - xfade :].copy()
    else:
        if plan.vocode == "full":
            start_col = 0
        else:
            margin_cols = -(-2 * stft_cfg.fft_size // col)
            start_col = max(0, (half - xfade) // col - margin_cols)
        audio = _vocode_columns(grid, codebook, stft_cfg, start_col, vocoder_iters, gl_ss)
        off = start_col * col
        fade_src = audio[half - xfade - off : half - off]
        seam = _blend(ch.pending_tail, fade_src, "linear")
        body = audio[half - off : seg - xfade - off]
        emitted = np.concatenate([seam, body])
        pending = audio[seg - xfade - off : seg - off].copy()

    ch.last_grid = grid
    ch.segments_emitted += 1
    ch.playback_cursor += emitted.shape[0]
    ch.pending_tail = pending
    return grid, emitted


def flush_channel(ch: ChannelState) -> np.ndarray:
    """Release the held-back crossfade tail; called once when a stream stops."""
    if ch.pending_tail is None:
        return np.zeros(0)
    tail = ch.pending_tail
    ch.pending_tail = None
    ch.playback_cursor += tail.shape[0]
    return tail


# ---------------- clocks ----------------


class WallClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep_until(self, t: float):
        delay = t - time.monotonic()
        if delay > 0:
            time.sleep(delay)


class VirtualClock:
    """Simulated time: work is instantaneous, sleeps jump the clock forward."""

    def __init__(self, start: float = 0.0):
        self._t = float(start)

    def now(self) -> float:
        return self._t

    def sleep_until(self, t: float):
        if t > self._t:
            self._t = t


# ---------------- sinks ----------------


class AudioSink:
    """Accepts aligned per-channel sample blocks, one window at a time."""

    def open(self, sample_rate: int, channels: int):
        raise NotImplementedError

    def write_window(self, blocks: list[np.ndarray]):
        raise NotImplementedError

    def flush(self):
        pass

    def close(self):
        pass


class InterleavedWavSink(AudioSink):
    """Single N-channel WAV; the header is refreshed on every write so the
    file is valid even if the process dies mid-stream."""

    def __init__(self, path, fmt: str = "float32"):
        self.path = path
        self.fmt = fmt
        self._writer = None

    def open(self, sample_rate: int, channels: int):
        self._writer = WavWriter(self.path, sample_rate, channels, fmt=self.fmt)

    def write_window(self, blocks):
        if self._writer is None:
            raise SinkError("sink not opened")
        lengths = {b.shape[0] for b in blocks}
        if len(lengths) != 1:
            raise SinkError(f"window blocks have unequal lengths {sorted(lengths)}")
        self._writer.write(np.stack(blocks, axis=1))
        self._writer.flush()

    def close(self):
        if self._writer is not None:
            self._writer.close()


class PerChannelWavSink(AudioSink):
    """One mono WAV per channel in a directory."""

    def __init__(self, directory, fmt: str = "float32"):
        self.directory = directory
        self.fmt = fmt
        self._writers: list[WavWriter] = []

    def open(self, sample_rate: int, channels: int):
        import os

        try:
            os.makedirs(self.directory, exist_ok=True)
        except OSError as e:
            raise SinkError(f"cannot create sink directory {self.directory}: {e}") from e
        self._writers = [
            WavWriter(os.path.join(self.directory, f"channel_{i}.wav"),
                      sample_rate, 1, fmt=self.fmt)
            for i in range(channels)
        ]

    def write_window(self, blocks):
        if len(blocks) != len(self._writers):
            raise SinkError("block count does not match channel count")
        for w, b in zip(self._writers, blocks):
            w.write(b)
            w.flush()

    def close(self):
        for w in self._writers:
            w.close()


class NullSink(AudioSink):
    """Discards audio but keeps per-channel sample counts and content hashes."""

    def __init__(self):
        import hashlib

        self._hashlib = hashlib
        self._hashes = []
        self.samples_written = []

    def open(self, sample_rate: int, channels: int):
        self._hashes = [self._hashlib.sha256() for _ in range(channels)]
        self.samples_written = [0] * channels

    def write_window(self, blocks):
        for i, b in enumerate(blocks):
            self._hashes[i].update(np.asarray(b, dtype=np.float64).tobytes())
            self.samples_written[i] += b.shape[0]

    def digests(self) -> list[str]:
        return [h.hexdigest() for h in self._hashes]


class DeviceSink(AudioSink):
    """OS audio output; available only where the optional backend is installed."""

    def __init__(self, device=None):
        self.device = device
        self._stream = None

    def open(self, sample_rate: int, channels: int):
        try:
            import sounddevice
        except ImportError as e:
            raise SinkError(
                "device output needs the optional 'sounddevice' package"
            ) from e
        self._stream = sounddevice.OutputStream(
            samplerate=sample_rate, channels=channels, device=self.device
        )
        self._stream.start()

    def write_window(self, blocks):
        self._stream.write(np.stack(blocks, axis=1).astype(np.float32))

    def close(self):
        if self._stream is not None:
            self._stream.stop()
            self._stream.close()


# ---------------- stream scheduler ----------------


@dataclass
class ChannelStats:
    segments: int = 0
    underruns: int = 0
    last_latency_ms: float = 0.0
    total_latency_ms: float = 0.0
    buffer_s: float = 0.0


@dataclass
class StreamStats:
    channels: list = field(default_factory=list)
    windows: int = 0
    started: float = 0.0
    finished: float = 0.0

    def snapshot(self) -> dict:
        return {
            "windows": self.windows,
            "channels": [
                {
                    "segments": c.segments,
                    "underruns": c.underruns,
                    "last_latency_ms": round(c.last_latency_ms, 3),
                    "mean_latency_ms": round(
                        c.total_latency_ms / max(c.segments, 1), 3
                    ),
                    "buffer_s": round(c.buffer_s, 3),
                }
                for c in self.channels
            ],
        }

    @property
    def total_underruns(self) -> int:
        return sum(c.underruns for c in self.channels)


def run_stream(channels: list[ChannelState], model: MaskedTokenModel,
               codebook: Codebook, stft_cfg: StftConfig, plan: OutpaintPlan,
               sink: AudioSink, clock=None, master_seed: int = 0,
               audio_cond: CondEmbedding | None = None,
               max_windows: int | None = None, stop_event: threading.Event | None = None,
               control_queue=None, event_cb=None, vocoder_iters: int = 32,
               schedule: MaskSchedule | None = None, buffer_ahead: int = 2,
               workers: int = 1, pause_flag: threading.Event | None = None,
               stats: StreamStats | None = None) -> StreamStats:
    """Drive continuous generation until `max_windows` or `stop_event`.

    Every window each channel contributes one segment's emission; control
    events from `control_queue` (dicts with kind/channel_id/payload) are
    drained exactly at window boundaries. Underruns are counted per
    channel when its chunk misses the playback deadline; the starved
    window is replaced by silence so the other channels never block.
    """
    clock = clock or WallClock()
    if stats is None:
        stats = StreamStats(channels=[ChannelStats() for _ in channels])
    if len(stats.channels) != len(channels):
        stats.channels = [ChannelStats() for _ in channels]
    window_s = plan.window_seconds
    xfade = plan.crossfade_samples(stft_cfg)

    def emit(event: dict):
        if event_cb is not None:
            event_cb(event)

    sink.open(stft_cfg.sample_rate, len(channels))
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    stats.started = clock.now()
    start = stats.started
    w = 0
    try:
        while True:
            if stop_event is not None and stop_event.is_set():
                break
            if max_windows is not None and w >= max_windows:
                break
            while pause_flag is not None and pause_flag.is_set():
                if stop_event is not None and stop_event.is_set():
                    break
                time.sleep(0.01)
            _apply_control(channels, control_queue, emit, clock)

            deadline = start + (w + 1) * window_s

            def gen(ch: ChannelState):
                seed = channel_seed(master_seed, ch.channel_id, ch.segments_emitted)
                t0 = time.perf_counter()
                grid, audio = outpaint_step(
                    ch, model, codebook, stft_cfg, plan, audio_cond=audio_cond,
                    seed=seed, vocoder_iters=vocoder_iters, schedule=schedule,
                )
                latency_ms = (time.perf_counter() - t0) * 1e3
                return grid, audio, latency_ms, clock.now()

            if pool is not None:
                results = list(pool.map(gen, channels))
            else:
                results = [gen(ch) for ch in channels]

            blocks = []
            for ch, cstat, (grid, audio, latency_ms, done_at) in zip(
                channels, stats.channels, results
            ):
                cstat.segments += 1
                cstat.last_latency_ms = latency_ms
                cstat.total_latency_ms += latency_ms
                cstat.buffer_s = max(0.0, (w + 1) * window_s - (clock.now() - start))
                late = done_at > deadline
                if late:
                    cstat.underruns += 1
                    blocks.append(np.zeros_like(audio))
                else:
                    blocks.append(audio)
                emit({
                    "event": "segment",
                    "t": clock.now(),
                    "channel": ch.channel_id,
                    "segment": ch.segments_emitted,
                    "grid_sha": grid.sha256(),
                    "latency_ms": round(latency_ms, 3),
                    "buffer_s": round(cstat.buffer_s, 3),
                    "underrun": late,
                })
            try:
                sink.write_window(blocks)
            except SinkError:
                emit({"event": "sink_error", "t": clock.now(),
                      "stats": stats.snapshot()})
                raise
            stats.windows = w + 1
            emit({"event": "boundary", "t": clock.now(), "window": w,
                  "stats": stats.snapshot()})

            pace = start + (w + 1 - buffer_ahead) * window_s
            if pace > clock.now():
                clock.sleep_until(pace)
            w += 1
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
        tails = [flush_channel(ch) for ch in channels]
        if any(t.size for t in tails):
            tails = [
                t if t.size == xfade else np.zeros(xfade) for t in tails
            ]
            try:
                sink.write_window(tails)
            except SinkError:
                pass
        sink.close()
        stats.finished = clock.now()
        emit({"event": "stopped", "t": stats.finished, "stats": stats.snapshot()})
    return stats


def _apply_control(channels, control_queue, emit, clock):
    if control_queue is None:
        return
    import queue as _q

    while True:
        try:
            ev = control_queue.get_nowait()
        except _q.Empty:
            return
        kind = ev.get("kind")
        cid = ev.get("channel_id")
        outcome = {"event": "control_applied", "t": clock.now(), "kind": kind,
                   "channel_id": cid}
        try:
            if kind == "set_prompt":
                channels[cid].set_prompt(ev["payload"])
            elif kind == "set_cfg_scale":
                channels[cid].set_cfg_scale(float(ev["payload"]))
            elif kind == "snapshot":
                outcome["channels"] = [
                    {"channel_id": c.channel_id, "prompt": c.prompt,
                     "cfg_scale": c.cfg_scale, "segments": c.segments_emitted}
                    for c in channels
                ]
            else:
                outcome["error"] = f"unknown control kind {kind!r}"
        except Exception as e:  # invalid payloads must not kill the stream
            outcome["error"] = str(e)
        emit(outcome)
