"""RIFF WAV reading and writing.

Writing goes through :class:`WavWriter`, which supports 16-bit PCM and
32-bit float, any channel count, incremental appends, and periodic
header finalization so a file killed mid-stream is still a valid WAV.
Reading accepts the same formats and returns float64 in [-1, 1].
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.io import wavfile

from .errors import SinkError

_FORMAT_PCM16 = "pcm16"
_FORMAT_FLOAT32 = "float32"


class WavWriter:
    """Incremental multi-channel WAV writer.

    `write` takes (samples, channels) float arrays in [-1, 1] and
    interleaves them. `flush` rewrites the RIFF/data sizes in place, so
    the file on disk is always a finalized, readable WAV.
    """

    def __init__(self, path, sample_rate: int, channels: int, fmt: str = _FORMAT_FLOAT32):
        if fmt not in (_FORMAT_PCM16, _FORMAT_FLOAT32):
            raise SinkError(f"unsupported WAV format {fmt!r}")
        if channels < 1:
            raise SinkError(f"channel count must be >= 1, got {channels}")
        self.path = str(path)
        self.sample_rate = int(sample_rate)
        self.channels = int(channels)
        self.fmt = fmt
        self._bytes_per_sample = 2 if fmt == _FORMAT_PCM16 else 4
        self._data_bytes = 0
        self._closed = False
        try:
            self._fh = open(self.path, "wb")
        except OSError as e:
            raise SinkError(f"cannot open {self.path}: {e}") from e
        self._write_header()

    def _write_header(self):
        audio_format = 1 if self.fmt == _FORMAT_PCM16 else 3
        block_align = self.channels * self._bytes_per_sample
        hdr = struct.pack(
            "<4sI4s4sIHHIIHH4sI",
            b"RIFF",
            36 + self._data_bytes,
            b"WAVE",
            b"fmt ",
            16,
            audio_format,
            self.channels,
            self.sample_rate,
            self.sample_rate * block_align,
            block_align,
            self._bytes_per_sample * 8,
            b"data",
            self._data_bytes,
        )
        self._fh.seek(0)
        self._fh.write(hdr)

    def write(self, block: np.ndarray):
        """Append a (samples, channels) or (samples,) mono block."""
        if self._closed:
            raise SinkError(f"{self.path} already closed")
        block = np.asarray(block, dtype=np.float64)
        if block.ndim == 1:
            block = block[:, None]
        if block.shape[1] != self.channels:
            raise SinkError(
                f"block has {block.shape[1]} channels, writer expects {self.channels}"
            )
        if self.fmt == _FORMAT_PCM16:
            scaled = np.clip(np.rint(block * 32767.0), -32768, 32767).astype("<i2")
        else:
            scaled = np.clip(block, -1.0, 1.0).astype("<f4")
        raw = scaled.tobytes()  # row-major = interleaved
        self._fh.seek(0, 2)
        self._fh.write(raw)
        self._data_bytes += len(raw)

    def flush(self):
        if self._closed:
            return
        self._write_header()
        self._fh.flush()

    def close(self):
        if self._closed:
            return
        self.flush()
        self._fh.close()
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_wav(path, data: np.ndarray, sample_rate: int, fmt: str = _FORMAT_FLOAT32):
    """One-shot write of a (samples,) or (samples, channels) array."""
    data = np.asarray(data, dtype=np.float64)
    channels = 1 if data.ndim == 1 else data.shape[1]
    with WavWriter(path, sample_rate, channels, fmt=fmt) as w:
        w.write(data)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file to float64 in [-1, 1]. Shape (samples,) or (samples, channels)."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        out = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        out = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        out = data.astype(np.float64)
    elif data.dtype == np.uint8:
        out = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise ValueError(f"unsupported WAV sample dtype {data.dtype}")
    return out, int(rate)
