"""Steer a running stream.

Starts the eight-channel engine on a simulated clock with the HTTP
control surface attached, then acts as an operator: reads the state,
retargets one channel's prompt, raises another's guidance scale, and
watches the change land exactly at the next segment boundary while the
other channels continue untouched.

Run:  python demos/05_live_control.py
"""

import json
import time
import urllib.request

import numpy as np

from soundloom.codec import patchify, train_codebook
from soundloom.config import ChannelSpec, EngineConfig, _SHIPPED_PROMPTS
from soundloom.corpus import CorpusFamily, synth_corpus
from soundloom.dsp import StftConfig, wav_to_mel
from soundloom.engine import Engine
from soundloom.generator import GeneratorConfig, MaskedTokenModel
from soundloom.service import ControlService
from soundloom.streamer import NullSink, OutpaintPlan, VirtualClock

# Coarse-raster engine so each window takes well under a second.
cfg = EngineConfig(
    stft=StftConfig(hop_size=1000, mel_bins=64),
    codebook_size=32,
    generator=GeneratorConfig(blocks=1, dim=32, heads=2, codebook_size=32,
                              grid=(4, 30), decode_iters=4),
    plan=OutpaintPlan(segment_columns=30, overlap_columns=15),
    channels=[ChannelSpec(p, 1.5) for p in _SHIPPED_PROMPTS],
    vocoder_iterations=2,
    sink={"kind": "null"},
)
waves, _ = synth_corpus([CorpusFamily("tone", 4, 10.0)], seed=0)
patches = np.concatenate([patchify(wav_to_mel(w, cfg.stft))[0] for w in waves])
codebook = train_codebook(patches, cfg.codebook_size, iters=5, seed=0)
engine = Engine(cfg, codebook, MaskedTokenModel(cfg.generator))

service = ControlService(engine)
service.start()
print(f"control service: {service.url}")


def get(path):
    with urllib.request.urlopen(f"{service.url}{path}", timeout=10) as r:
        return json.loads(r.read())


def post(path, payload):
    req = urllib.request.Request(f"{service.url}{path}",
                                 data=json.dumps(payload).encode(),
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=10) as r:
        return json.loads(r.read())


# Slow the simulated clock down just enough to interact between windows.
class PacedClock(VirtualClock):
    def sleep_until(self, t):
        time.sleep(0.4)
        super().sleep_until(t)


boundaries = []
engine.start(sink=NullSink(), clock=PacedClock(), max_windows=8,
             event_cb=lambda e: boundaries.append(e) if e["event"] == "boundary" else None)

while not boundaries:
    time.sleep(0.05)
state = get("/v1/state")
print("channels:", [c["prompt"] for c in state["channels"]][:3], "...")

print(post("/v1/control", {"kind": "set_prompt", "channel_id": 2,
                           "payload": "a colder, emptier hallway"}))
print(post("/v1/control", {"kind": "set_cfg_scale", "channel_id": 5,
                           "payload": 3.0}))

engine.join()
state = get("/v1/state")
print("channel 2 prompt is now:", repr(state["channels"][2]["prompt"]))
print("channel 5 cfg scale is now:", state["channels"][2 + 3]["cfg_scale"])
print("segments per channel:", [c["segments_emitted"] for c in state["channels"]])
service.stop()
