import { ControlRejected, EngineClient, EngineOffline } from "./api.js";
import type { ChannelStateWire, EngineStateWire, SegmentEvent, StreamEvent } from "./types.js";

interface BoundaryStats {
    windows: number;
    channels: Array<{
        segments: number;
        underruns: number;
        last_latency_ms: number;
        mean_latency_ms: number;
        buffer_s: number;
    }>;
}

/** Eight-channel dashboard. Authoritative fields (prompt, cfg scale) are
 *  only ever rendered from GET /v1/state; pushed stats are applied as they
 *  stream in. Control edits stay "pending" until the engine confirms the
 *  event landed at a window boundary. */
export class Dashboard {
    private cards: HTMLElement[] = [];
    private pending = new Set<string>();
    private bust = 0;

    constructor(
        private root: HTMLElement,
        private client: EngineClient,
        private doc: Document = root.ownerDocument,
    ) {}

    async init(): Promise<void> {
        const state = await this.client.getState();
        this.render(state);
    }

    // ---- rendering ----

    private render(state: EngineStateWire): void {
        this.root.innerHTML = "";
        const banner = this.el("div", "banner");
        banner.dataset.testid = "banner";
        banner.style.display = "none";
        this.root.appendChild(banner);

        const header = this.el("div", "header");
        const paused = this.el("span", "paused-badge");
        paused.dataset.testid = "paused";
        paused.textContent = "paused";
        paused.style.display = state.paused ? "" : "none";
        const pauseBtn = this.el("button") as HTMLButtonElement;
        pauseBtn.dataset.testid = "pause";
        pauseBtn.textContent = "pause";
        pauseBtn.onclick = () => void this.submit({ kind: "pause" });
        const resumeBtn = this.el("button") as HTMLButtonElement;
        resumeBtn.dataset.testid = "resume";
        resumeBtn.textContent = "resume";
        resumeBtn.onclick = () => void this.submit({ kind: "resume" });
        header.append(paused, pauseBtn, resumeBtn);
        this.root.appendChild(header);

        const grid = this.el("div", "grid");
        grid.dataset.testid = "grid";
        this.cards = state.channels.map((ch) => this.buildCard(ch));
        for (const card of this.cards) grid.appendChild(card);
        this.root.appendChild(grid);
    }

    private buildCard(ch: ChannelStateWire): HTMLElement {
        const card = this.el("div", "card");
        card.dataset.testid = `card-${ch.channel_id}`;

        const title = this.el("h3");
        title.textContent = `channel ${ch.channel_id}`;
        card.appendChild(title);

        const prompt = this.el("div", "prompt");
        prompt.dataset.field = "prompt";
        card.appendChild(prompt);

        const promptInput = this.el("input") as HTMLInputElement;
        promptInput.dataset.field = "prompt-input";
        const promptApply = this.el("button") as HTMLButtonElement;
        promptApply.dataset.field = "prompt-apply";
        promptApply.textContent = "set prompt";
        promptApply.onclick = () =>
            void this.submitPrompt(ch.channel_id, promptInput.value);
        card.append(promptInput, promptApply);

        const scale = this.el("div", "scale");
        scale.dataset.field = "cfg";
        card.appendChild(scale);

        const scaleInput = this.el("input") as HTMLInputElement;
        scaleInput.dataset.field = "cfg-input";
        const scaleApply = this.el("button") as HTMLButtonElement;
        scaleApply.dataset.field = "cfg-apply";
        scaleApply.textContent = "set scale";
        scaleApply.onclick = () =>
            void this.submitScale(ch.channel_id, scaleInput.value);
        card.append(scaleInput, scaleApply);

        for (const field of ["segments", "underruns", "buffer", "latency"]) {
            const row = this.el("div", "stat");
            row.dataset.field = field;
            card.appendChild(row);
        }

        const pendingBadge = this.el("span", "pending-badge");
        pendingBadge.dataset.field = "pending";
        pendingBadge.textContent = "awaiting boundary";
        pendingBadge.style.display = "none";
        card.appendChild(pendingBadge);

        const img = this.el("img") as HTMLImageElement;
        img.dataset.field = "spectrogram";
        img.alt = `channel ${ch.channel_id} last segment`;
        card.appendChild(img);

        this.applyChannelState(card, ch);
        return card;
    }

    private applyChannelState(card: HTMLElement, ch: ChannelStateWire): void {
        this.setField(card, "prompt", ch.prompt);
        this.setField(card, "cfg", `guidance ${ch.cfg_scale}`);
        this.setField(card, "segments", `segments ${ch.segments_emitted}`);
        this.setField(card, "underruns", `underruns ${ch.underruns ?? 0}`);
        this.setField(card, "buffer", `buffer ${(ch.buffer_s ?? 0).toFixed(2)} s`);
        this.setField(card, "latency", `latency ${(ch.last_latency_ms ?? 0).toFixed(1)} ms`);
    }

    private setField(card: HTMLElement, field: string, text: string): void {
        const node = card.querySelector<HTMLElement>(`[data-field="${field}"]`);
        if (node) node.textContent = text;
    }

    field(channel: number, field: string): string {
        const node = this.cards[channel]?.querySelector<HTMLElement>(
            `[data-field="${field}"]`,
        );
        return node?.textContent ?? "";
    }

    // ---- pushed events ----

    handleEvent(event: StreamEvent): void {
        switch (event.event) {
            case "segment":
                this.applySegment(event as SegmentEvent);
                break;
            case "boundary":
                this.applyBoundary(event.stats as BoundaryStats | undefined);
                this.refreshSpectrograms();
                break;
            case "control_applied":
                if (typeof event.error === "string") this.showBanner(event.error);
                this.pending.delete(
                    `${String(event.kind)}:${String(event.channel_id)}`,
                );
                void this.refreshState();
                break;
            case "paused":
            case "resumed":
                this.setPaused(event.event === "paused");
                break;
            default:
                break;
        }
    }

    private applySegment(event: SegmentEvent): void {
        const card = this.cards[event.channel];
        if (!card) return;
        this.setField(card, "segments", `segments ${event.segment}`);
        this.setField(card, "buffer", `buffer ${event.buffer_s.toFixed(2)} s`);
        this.setField(card, "latency", `latency ${event.latency_ms.toFixed(1)} ms`);
        if (event.underrun) {
            const row = card.querySelector<HTMLElement>('[data-field="underruns"]');
            const current = parseInt(row?.textContent?.replace(/\D+/g, "") ?? "0", 10);
            this.setField(card, "underruns", `underruns ${current + 1}`);
        }
    }

    private applyBoundary(stats?: BoundaryStats): void {
        if (!stats) return;
        stats.channels.forEach((c, i) => {
            const card = this.cards[i];
            if (!card) return;
            this.setField(card, "segments", `segments ${c.segments}`);
            this.setField(card, "underruns", `underruns ${c.underruns}`);
            this.setField(card, "buffer", `buffer ${c.buffer_s.toFixed(2)} s`);
            this.setField(card, "latency", `latency ${c.last_latency_ms.toFixed(1)} ms`);
        });
    }

    private refreshSpectrograms(): void {
        this.bust += 1;
        this.cards.forEach((card, i) => {
            const img = card.querySelector<HTMLImageElement>('[data-field="spectrogram"]');
            if (img) img.src = this.client.spectrogramUrl(i, this.bust);
        });
    }

    async refreshState(): Promise<void> {
        try {
            const state = await this.client.getState();
            state.channels.forEach((ch, i) => {
                const card = this.cards[i];
                if (card) this.applyChannelState(card, ch);
            });
            this.setPaused(state.paused);
            this.updatePendingBadges();
        } catch {
            this.showBanner("engine unreachable");
        }
    }

    // ---- operator actions ----

    async submitPrompt(channel: number, prompt: string): Promise<void> {
        if (!prompt) {
            this.showBanner("prompt must not be empty");
            return;
        }
        await this.submit({ kind: "set_prompt", channel_id: channel, payload: prompt });
    }

    async submitScale(channel: number, raw: string | number): Promise<void> {
        const value = typeof raw === "number" ? raw : parseFloat(raw);
        if (!Number.isFinite(value) || value < 0) {
            this.showBanner("guidance scale must be a number >= 0");
            return; // blocked client side, never sent
        }
        await this.submit({ kind: "set_cfg_scale", channel_id: channel, payload: value });
    }

    private async submit(event: {
        kind: "set_prompt" | "set_cfg_scale" | "pause" | "resume";
        channel_id?: number;
        payload?: string | number;
    }): Promise<void> {
        try {
            const result = await this.client.submitControl(event);
            if (result.applied === "next_boundary") {
                this.pending.add(`${event.kind}:${event.channel_id}`);
                this.updatePendingBadges();
            }
            this.hideBanner();
        } catch (err) {
            if (err instanceof ControlRejected) {
                this.showBanner(err.reason); // server's reason, verbatim
            } else if (err instanceof EngineOffline) {
                this.showBanner("engine offline: control not delivered");
            } else {
                this.showBanner(String(err));
            }
        }
    }

    private updatePendingBadges(): void {
        this.cards.forEach((card, i) => {
            const badge = card.querySelector<HTMLElement>('[data-field="pending"]');
            if (!badge) return;
            const waiting =
                this.pending.has(`set_prompt:${i}`) || this.pending.has(`set_cfg_scale:${i}`);
            badge.style.display = waiting ? "" : "none";
        });
    }

    hasPending(channel: number): boolean {
        return (
            this.pending.has(`set_prompt:${channel}`) ||
            this.pending.has(`set_cfg_scale:${channel}`)
        );
    }

    // ---- connection status ----

    setConnected(connected: boolean): void {
        if (connected) this.hideBanner();
        else this.showBanner("disconnected from engine, reconnecting");
    }

    showBanner(text: string): void {
        const banner = this.root.querySelector<HTMLElement>('[data-testid="banner"]');
        if (banner) {
            banner.textContent = text;
            banner.style.display = "";
        }
    }

    private hideBanner(): void {
        const banner = this.root.querySelector<HTMLElement>('[data-testid="banner"]');
        if (banner) banner.style.display = "none";
    }

    private setPaused(paused: boolean): void {
        const badge = this.root.querySelector<HTMLElement>('[data-testid="paused"]');
        if (badge) badge.style.display = paused ? "" : "none";
    }

    private el(tag: string, cls?: string): HTMLElement {
        const node = this.doc.createElement(tag);
        if (cls) node.className = cls;
        return node;
    }
}
