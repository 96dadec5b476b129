import type { ControlEventWire, EngineStateWire } from "./types.js";

/** The engine said no; `reason` is the server's text, displayed verbatim. */
export class ControlRejected extends Error {
    constructor(public reason: string) {
        super(reason);
        this.name = "ControlRejected";
    }
}

export class EngineOffline extends Error {
    constructor(cause: unknown) {
        super(`engine unreachable: ${String(cause)}`);
        this.name = "EngineOffline";
    }
}

/** Thin client over the documented /v1 endpoints; the console has no other
 *  path to the engine. */
export class EngineClient {
    constructor(
        private baseUrl: string,
        private fetchFn: typeof fetch = globalThis.fetch.bind(globalThis),
    ) {}

    get base(): string {
        return this.baseUrl;
    }

    async getState(): Promise<EngineStateWire> {
        let res: Response;
        try {
            res = await this.fetchFn(`${this.baseUrl}/v1/state`);
        } catch (err) {
            throw new EngineOffline(err);
        }
        if (!res.ok) throw new Error(`state fetch failed: ${res.status}`);
        return (await res.json()) as EngineStateWire;
    }

    async submitControl(event: ControlEventWire): Promise<{ accepted: boolean; applied: string }> {
        let res: Response;
        try {
            res = await this.fetchFn(`${this.baseUrl}/v1/control`, {
                method: "POST",
                headers: { "Content-Type": "application/json" },
                body: JSON.stringify(event),
            });
        } catch (err) {
            throw new EngineOffline(err);
        }
        const body = (await res.json()) as Record<string, unknown>;
        if (res.status === 400) throw new ControlRejected(String(body.error ?? "rejected"));
        if (!res.ok) throw new Error(`control failed: ${res.status}`);
        return body as { accepted: boolean; applied: string };
    }

    eventsUrl(): string {
        return `${this.baseUrl}/v1/events`;
    }

    spectrogramUrl(channel: number, cacheBust?: number): string {
        const bust = cacheBust === undefined ? "" : `?t=${cacheBust}`;
        return `${this.baseUrl}/v1/spectrogram/${channel}.png${bust}`;
    }
}
