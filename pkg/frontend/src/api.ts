// Typed client for the labeling server's JSON API. The server owns all
// state; everything shown in the UI comes from these payloads verbatim.

export type Signals = {
  bbox_delta_px: number;
  outline_agreement: number;
  tone_delta: number;
  mean_abs_pixel_diff: number;
};

export type ClassProgress = {
  similar: number;
  distinct: number;
  skip: number;
  closed: boolean;
  candidates: number;
};

export type Progress = {
  classes: Record<string, ClassProgress>;
  totals: { similar: number; distinct: number; skip: number };
  judged: number;
  fraction_complete: number;
  current_class: number | null;
  complete: boolean;
};

export type PairResponse = {
  complete: boolean;
  test_idx: number;
  train_idx: number;
  distance: number;
  class: number;
  class_name: string;
  test_image: number[]; // 784 grayscale values, row-major, 0..255
  train_image: number[];
  signals: Signals;
  progress: Progress;
};

export type CompleteResponse = { complete: true; progress: Progress };

export type SessionInfo = {
  dataset: string;
  analyst: string;
  class_names: string[];
} & Progress;

export type Decision = "similar" | "distinct" | "skip";

export type VerdictResult =
  | { kind: "ok"; progress: Progress }
  | { kind: "stale" }
  | { kind: "network" };

export class ApiClient {
  constructor(private base: string = "") {}

  async session(): Promise<SessionInfo> {
    const r = await fetch(`${this.base}/api/session`);
    return r.json();
  }

  async nextPair(): Promise<PairResponse | CompleteResponse> {
    const r = await fetch(`${this.base}/api/pairs/next`);
    return r.json();
  }

  async progress(): Promise<Progress> {
    const r = await fetch(`${this.base}/api/progress`);
    return r.json();
  }

  async submitVerdict(
    testIdx: number,
    trainIdx: number,
    decision: Decision,
  ): Promise<VerdictResult> {
    let r: Response;
    try {
      r = await fetch(`${this.base}/api/verdicts`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ test_idx: testIdx, train_idx: trainIdx, decision }),
      });
    } catch {
      return { kind: "network" };
    }
    if (r.status === 409) return { kind: "stale" };
    if (!r.ok) return { kind: "network" };
    const body = await r.json();
    return { kind: "ok", progress: body.progress };
  }
}
