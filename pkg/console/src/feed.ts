import type { StreamEvent } from "./types.js";

/** Subset of EventSource the feed needs; tests and the node integration
 *  harness substitute their own implementations. */
export interface EventSourceLike {
    onmessage: ((ev: { data: string }) => void) | null;
    onerror: ((ev: unknown) => void) | null;
    onopen: ((ev: unknown) => void) | null;
    close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

const defaultFactory: EventSourceFactory = (url) =>
    new (globalThis as { EventSource: new (u: string) => EventSourceLike }).EventSource(url);

/** Server-push subscription with automatic reconnect. One instance per page. */
export class EventFeed {
    onEvent: ((event: StreamEvent) => void) | null = null;
    onStatus: ((connected: boolean) => void) | null = null;

    private source: EventSourceLike | null = null;
    private stopped = false;
    private attempts = 0;
    private timer: ReturnType<typeof setTimeout> | null = null;

    constructor(
        private url: string,
        private factory: EventSourceFactory = defaultFactory,
        private baseDelayMs = 500,
    ) {}

    start(): void {
        this.stopped = false;
        this.connect();
    }

    private connect(): void {
        if (this.stopped) return;
        this.source = this.factory(this.url);
        this.source.onopen = () => {
            this.attempts = 0;
            this.onStatus?.(true);
        };
        this.source.onmessage = (ev) => {
            let parsed: StreamEvent;
            try {
                parsed = JSON.parse(ev.data) as StreamEvent;
            } catch {
                return; // comments / pings
            }
            this.onEvent?.(parsed);
        };
        this.source.onerror = () => {
            this.onStatus?.(false);
            this.source?.close();
            this.source = null;
            if (this.stopped) return;
            const delay = Math.min(this.baseDelayMs * 2 ** this.attempts, 5000);
            this.attempts += 1;
            this.timer = setTimeout(() => this.connect(), delay);
        };
    }

    stop(): void {
        this.stopped = true;
        if (this.timer !== null) clearTimeout(this.timer);
        this.source?.close();
        this.source = null;
    }
}
