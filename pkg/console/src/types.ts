/** Wire types mirroring the engine's /v1 JSON schemas. */

export interface ChannelStateWire {
    channel_id: number;
    prompt: string;
    cfg_scale: number;
    segments_emitted: number;
    playback_cursor: number;
    segments?: number;
    underruns?: number;
    last_latency_ms?: number;
    mean_latency_ms?: number;
    buffer_s?: number;
}

export interface EngineStateWire {
    version: number;
    running: boolean;
    paused: boolean;
    windows: number;
    channels: ChannelStateWire[];
}

export type ControlKind = "set_prompt" | "set_cfg_scale" | "pause" | "resume" | "snapshot";

export interface ControlEventWire {
    kind: ControlKind;
    channel_id?: number;
    payload?: string | number;
}

export interface StreamEvent {
    event: string;
    [key: string]: unknown;
}

export interface SegmentEvent extends StreamEvent {
    event: "segment";
    channel: number;
    segment: number;
    grid_sha: string;
    latency_ms: number;
    buffer_s: number;
    underrun: boolean;
}
