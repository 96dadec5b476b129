import json
import threading
import time
import urllib.request
from urllib.error import HTTPError

import pytest

from soundloom.engine import Engine, validate_control_event
from soundloom.errors import ConfigError
from soundloom.service import ControlService
from soundloom.streamer import NullSink

from conftest import lean_engine_config, random_codebook
from soundloom.generator.model import MaskedTokenModel


class GatedClock:
    """Virtual clock whose sleeps block until the test releases them."""

    def __init__(self):
        self._t = 0.0
        self.gate = threading.Semaphore(0)

    def now(self):
        return self._t

    def sleep_until(self, t):
        if t > self._t:
            self.gate.acquire()
            self._t = t

    def release(self):
        self.gate.release()


def get_json(url):
    with urllib.request.urlopen(url, timeout=10) as r:
        return json.loads(r.read())


def post_json(url, payload):
    req = urllib.request.Request(
        url, data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"}, method="POST",
    )
    with urllib.request.urlopen(req, timeout=10) as r:
        return r.status, json.loads(r.read())


def wait_for(sub, predicate, timeout=30.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        event = sub.get(timeout=max(0.01, deadline - time.monotonic()))
        if predicate(event):
            return event
    raise AssertionError("expected event never arrived")


@pytest.fixture()
def live():
    cfg = lean_engine_config()
    engine = Engine(cfg, random_codebook(cfg.codebook_size, seed=3),
                    MaskedTokenModel(cfg.generator))
    service = ControlService(engine)
    service.start()
    clock = GatedClock()
    sub = engine.subscribe()
    engine.start(sink=NullSink(), clock=clock, max_windows=6, buffer_ahead=1)
    yield engine, service, clock, sub
    engine.stop()
    for _ in range(20):
        clock.release()
    engine.join(timeout=30)
    service.stop()


class TestValidateControlEvent:
    def test_accepts_known_kinds(self):
        ev = validate_control_event({"kind": "set_cfg_scale", "channel_id": 2,
                                     "payload": "2.5"})
        assert ev["payload"] == 2.5

    @pytest.mark.parametrize("event", [
        {"kind": "reboot"},
        {"kind": "set_prompt", "channel_id": 9, "payload": "x"},
        {"kind": "set_prompt", "channel_id": 0, "payload": ""},
        {"kind": "set_cfg_scale", "channel_id": 0, "payload": "fast"},
        {"kind": "set_cfg_scale", "channel_id": 0, "payload": -2},
        "not an object",
    ])
    def test_rejects_invalid(self, event):
        with pytest.raises(ConfigError):
            validate_control_event(event)


class TestService:
    def test_state_control_and_feed(self, live):
        engine, service, clock, sub = live
        base = service.url

        wait_for(sub, lambda e: e["event"] == "boundary" and e["window"] == 1)
        state = get_json(f"{base}/v1/state")
        assert state["running"] is True
        assert len(state["channels"]) == 8
        assert all(c["segments_emitted"] == 2 for c in state["channels"])

        # applied only at the next window boundary
        status, body = post_json(f"{base}/v1/control",
                                 {"kind": "set_cfg_scale", "channel_id": 3,
                                  "payload": 2.0})
        assert status == 202 and body["applied"] == "next_boundary"
        assert engine.channels[3].cfg_scale == 1.5  # not yet

        clock.release()
        applied = wait_for(sub, lambda e: e["event"] == "control_applied")
        assert applied["kind"] == "set_cfg_scale" and "error" not in applied
        assert engine.channels[3].cfg_scale == 2.0
        state = get_json(f"{base}/v1/state")
        assert state["channels"][3]["cfg_scale"] == 2.0
        assert state["channels"][0]["cfg_scale"] == 1.5

    def test_malformed_events_rejected_without_disrupting_stream(self, live):
        engine, service, clock, sub = live
        base = service.url
        wait_for(sub, lambda e: e["event"] == "boundary")

        with pytest.raises(HTTPError) as err:
            post_json(f"{base}/v1/control", {"kind": "set_cfg_scale",
                                             "channel_id": 3, "payload": -1})
        assert err.value.code == 400
        assert "error" in json.loads(err.value.read())

        with pytest.raises(HTTPError) as err:
            post_json(f"{base}/v1/control", {"kind": "warp", "channel_id": 0})
        assert err.value.code == 400

        clock.release()  # stream continues past the rejected events
        wait_for(sub, lambda e: e["event"] == "boundary" and e["window"] >= 2)

    def test_sse_feed_delivers_events(self, live):
        engine, service, clock, sub = live
        req = urllib.request.Request(f"{service.url}/v1/events")
        got = []
        with urllib.request.urlopen(req, timeout=10) as r:
            clock.release()
            while len(got) < 3:
                line = r.readline().decode()
                if line.startswith("data: "):
                    got.append(json.loads(line[len("data: "):]))
        kinds = {e["event"] for e in got}
        assert kinds & {"segment", "boundary"}

    def test_spectrogram_png(self, live):
        engine, service, clock, sub = live
        wait_for(sub, lambda e: e["event"] == "boundary")
        with urllib.request.urlopen(f"{service.url}/v1/spectrogram/0.png",
                                    timeout=10) as r:
            assert r.headers["Content-Type"] == "image/png"
            assert r.read(8) == b"\x89PNG\r\n\x1a\n"

        with pytest.raises(HTTPError) as err:
            urllib.request.urlopen(f"{service.url}/v1/spectrogram/42.png", timeout=10)
        assert err.value.code == 404

    def test_pause_resume(self, live):
        engine, service, clock, sub = live
        base = service.url
        wait_for(sub, lambda e: e["event"] == "boundary")
        status, _ = post_json(f"{base}/v1/control", {"kind": "pause"})
        assert status == 202
        assert get_json(f"{base}/v1/state")["paused"] is True
        status, _ = post_json(f"{base}/v1/control", {"kind": "resume"})
        assert status == 202
        assert get_json(f"{base}/v1/state")["paused"] is False

    def test_unknown_path_404(self, live):
        _, service, _, _ = live
        with pytest.raises(HTTPError) as err:
            urllib.request.urlopen(f"{service.url}/v2/anything", timeout=10)
        assert err.value.code == 404


class TestStaticServing:
    def test_console_assets_served_when_configured(self, tmp_path):
        cfg = lean_engine_config()
        engine = Engine(cfg, random_codebook(cfg.codebook_size, seed=3),
                        MaskedTokenModel(cfg.generator))
        (tmp_path / "index.html").write_text("<html>console</html>")
        service = ControlService(engine, static_root=str(tmp_path))
        service.start()
        try:
            with urllib.request.urlopen(f"{service.url}/", timeout=10) as r:
                assert b"console" in r.read()
            with pytest.raises(HTTPError) as err:
                urllib.request.urlopen(f"{service.url}/../etc/passwd", timeout=10)
            assert err.value.code == 404
        finally:
            service.stop()
