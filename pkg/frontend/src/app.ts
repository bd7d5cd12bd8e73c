// Review application: fetch the next pair, paint it, submit verdicts.
// The server is the single source of truth; this file only moves its
// payloads onto the screen and key presses back to it.

import {
  ApiClient,
  Decision,
  PairResponse,
  Progress,
  SessionInfo,
} from "./api";
import { paintImage, signalHints } from "./render";

const RETRY_DELAY_MS = 1500;

type PendingVerdict = { testIdx: number; trainIdx: number; decision: Decision };

const KEY_TO_DECISION: Record<string, Decision> = {
  s: "similar",
  d: "distinct",
  k: "skip",
};

export class ReviewApp {
  private current: PairResponse | null = null;
  private pending: PendingVerdict | null = null;
  private classNames: string[] = [];
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private api: ApiClient,
    private doc: Document,
  ) {}

  private el<T extends HTMLElement>(id: string): T {
    const node = this.doc.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node as T;
  }

  async start(): Promise<void> {
    this.el("btn-similar").addEventListener("click", () => void this.submit("similar"));
    this.el("btn-distinct").addEventListener("click", () => void this.submit("distinct"));
    this.el("btn-skip").addEventListener("click", () => void this.submit("skip"));
    this.el("retry-btn").addEventListener("click", () => void this.recover());
    this.doc.addEventListener("keydown", (e) => this.handleKey(e as KeyboardEvent));
    try {
      const info: SessionInfo = await this.api.session();
      this.classNames = info.class_names;
      this.el("dataset").textContent = info.dataset;
    } catch {
      this.showBanner();
      return;
    }
    await this.fetchNext();
  }

  handleKey(e: KeyboardEvent): void {
    const decision = KEY_TO_DECISION[e.key.toLowerCase()];
    if (decision) void this.submit(decision);
  }

  async fetchNext(): Promise<void> {
    let pair: PairResponse | { complete: true; progress: Progress };
    try {
      pair = await this.api.nextPair();
    } catch {
      this.showBanner();
      return;
    }
    this.hideBanner();
    if (pair.complete) {
      this.current = null;
      this.showCompletion(pair.progress);
      return;
    }
    this.current = pair as PairResponse;
    this.renderPair(this.current);
  }

  async submit(decision: Decision): Promise<void> {
    if (!this.current || this.pending) return;
    const payload: PendingVerdict = {
      testIdx: this.current.test_idx,
      trainIdx: this.current.train_idx,
      decision,
    };
    await this.send(payload);
  }

  private async send(payload: PendingVerdict): Promise<void> {
    this.pending = payload;
    const result = await this.api.submitVerdict(
      payload.testIdx,
      payload.trainIdx,
      payload.decision,
    );
    if (result.kind === "network") {
      // keep the verdict; the server's stale check makes retries safe
      this.showBanner();
      this.retryTimer = setTimeout(() => void this.recover(), RETRY_DELAY_MS);
      return;
    }
    this.pending = null;
    if (result.kind === "ok") this.renderProgress(result.progress);
    await this.fetchNext(); // 409 lands here too: silently resync
  }

  private async recover(): Promise<void> {
    if (this.retryTimer) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    if (this.pending) {
      const payload = this.pending;
      this.pending = null;
      await this.send(payload);
      return;
    }
    await this.fetchNext();
  }

  private renderPair(pair: PairResponse): void {
    this.el("complete").hidden = true;
    this.el("pair").hidden = false;
    this.el("class-name").textContent =
      `${pair.class_name} (class ${pair.class})`;
    this.el("distance").textContent = pair.distance.toFixed(6);
    this.el("pair-ids").textContent = `test #${pair.test_idx} vs train #${pair.train_idx}`;
    paintImage(this.el<HTMLCanvasElement>("test-canvas"), pair.test_image);
    paintImage(this.el<HTMLCanvasElement>("train-canvas"), pair.train_image);
    this.renderSignals(pair);
    this.renderProgress(pair.progress);
  }

  private renderSignals(pair: PairResponse): void {
    const s = pair.signals;
    const hints = signalHints(s);
    const mark = (ok: boolean) => (ok ? "✓" : "✗");
    this.el("sig-bbox").textContent =
      `${mark(hints.bbox)} size/shape: bounding boxes differ by ${s.bbox_delta_px}px (≤10 hints similar)`;
    this.el("sig-outline").textContent =
      `${mark(hints.outline)} outline: ${(s.outline_agreement * 100).toFixed(1)}% overlap (≥90% hints similar)`;
    this.el("sig-tone").textContent =
      `${mark(hints.tone)} tone: mean foreground differs by ${s.tone_delta.toFixed(1)} (small = indistinguishable)`;
    this.el("sig-pixel").textContent =
      `· features: mean |Δpixel| ${s.mean_abs_pixel_diff.toFixed(1)} — check buttons/zippers/patterns/text by eye`;
  }

  private renderProgress(progress: Progress): void {
    const container = this.el("progress");
    container.innerHTML = "";
    for (const [cls, p] of Object.entries(progress.classes)) {
      const row = this.doc.createElement("div");
      row.className = "progress-row" + (p.closed ? " closed" : "");
      const label = this.classNames[Number(cls)] ?? cls;
      const fill = Math.min(1, p.distinct / 20);
      row.innerHTML =
        `<span class="label">${label}</span>` +
        `<span class="bar"><span class="fill" style="width:${(fill * 100).toFixed(0)}%"></span></span>` +
        `<span class="counts">${p.similar}s/${p.distinct}d/${p.skip}k</span>`;
      container.appendChild(row);
    }
    this.el("totals").textContent =
      `similar ${progress.totals.similar} · distinct ${progress.totals.distinct} · ` +
      `skip ${progress.totals.skip} · judged ${progress.judged}`;
  }

  private showCompletion(progress: Progress): void {
    this.el("pair").hidden = true;
    this.el("complete").hidden = false;
    this.el("class-name").textContent = "session complete";
    this.renderProgress(progress);
  }

  private showBanner(): void {
    this.el("banner").hidden = false;
    this.el("controls").hidden = true;
  }

  private hideBanner(): void {
    this.el("banner").hidden = true;
    this.el("controls").hidden = false;
  }
}
