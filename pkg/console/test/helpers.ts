import type { EventSourceLike } from "../src/feed.js";
import type { EngineStateWire, StreamEvent } from "../src/types.js";

/** Hand-cranked EventSource stand-in for unit tests. */
export class FakeEventSource implements EventSourceLike {
    static instances: FakeEventSource[] = [];
    onmessage: ((ev: { data: string }) => void) | null = null;
    onerror: ((ev: unknown) => void) | null = null;
    onopen: ((ev: unknown) => void) | null = null;
    closed = false;

    constructor(public url: string) {
        FakeEventSource.instances.push(this);
    }

    open(): void {
        this.onopen?.({});
    }

    emit(event: StreamEvent): void {
        this.onmessage?.({ data: JSON.stringify(event) });
    }

    fail(): void {
        this.onerror?.({});
    }

    close(): void {
        this.closed = true;
    }
}

/** Minimal SSE reader over fetch streaming; lets the browser client code run
 *  unmodified under node against a real engine. */
export class FetchEventSource implements EventSourceLike {
    onmessage: ((ev: { data: string }) => void) | null = null;
    onerror: ((ev: unknown) => void) | null = null;
    onopen: ((ev: unknown) => void) | null = null;
    private controller = new AbortController();

    constructor(url: string) {
        void this.run(url);
    }

    private async run(url: string): Promise<void> {
        try {
            const res = await fetch(url, { signal: this.controller.signal });
            if (!res.ok || res.body === null) throw new Error(`status ${res.status}`);
            this.onopen?.({});
            const reader = res.body.getReader();
            const decoder = new TextDecoder();
            let buffer = "";
            for (;;) {
                const { done, value } = await reader.read();
                if (done) break;
                buffer += decoder.decode(value, { stream: true });
                let idx: number;
                while ((idx = buffer.indexOf("\n\n")) >= 0) {
                    const frame = buffer.slice(0, idx);
                    buffer = buffer.slice(idx + 2);
                    for (const line of frame.split("\n")) {
                        if (line.startsWith("data: ")) {
                            this.onmessage?.({ data: line.slice(6) });
                        }
                    }
                }
            }
        } catch (err) {
            if (!this.controller.signal.aborted) this.onerror?.(err);
        }
    }

    close(): void {
        this.controller.abort();
    }
}

export function engineState(overrides: Partial<EngineStateWire> = {}): EngineStateWire {
    return {
        version: 1,
        running: true,
        paused: false,
        windows: 2,
        channels: Array.from({ length: 8 }, (_, i) => ({
            channel_id: i,
            prompt: `prompt ${i}`,
            cfg_scale: 1.5,
            segments_emitted: 2,
            playback_cursor: 0,
            segments: 2,
            underruns: 0,
            last_latency_ms: 12.5,
            mean_latency_ms: 11.0,
            buffer_s: 10.0,
        })),
        ...overrides,
    };
}

type FetchCall = { url: string; init?: RequestInit };

/** Records calls and plays back queued JSON responses. */
export function mockFetch(state: () => EngineStateWire) {
    const calls: FetchCall[] = [];
    const controlResponses: Array<{ status: number; body: unknown }> = [];
    const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
        const url = String(input);
        calls.push({ url, init });
        if (url.endsWith("/v1/state")) {
            return new Response(JSON.stringify(state()), { status: 200 });
        }
        if (url.endsWith("/v1/control")) {
            const next = controlResponses.shift() ?? {
                status: 202,
                body: { accepted: true, applied: "next_boundary" },
            };
            return new Response(JSON.stringify(next.body), { status: next.status });
        }
        return new Response("{}", { status: 404 });
    }) as typeof fetch;
    return { fetchFn, calls, controlResponses };
}
