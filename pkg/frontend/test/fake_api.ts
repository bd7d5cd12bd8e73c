// In-memory stand-in for the labeling server, mirroring its state rules:
// pairs present most-similar-first within the current class, a class closes
// at 20 distinct verdicts or exhaustion, and a verdict for anything but the
// currently presented pair is stale.

import type {
  CompleteResponse,
  Decision,
  PairResponse,
  Progress,
  SessionInfo,
  VerdictResult,
} from "../src/api";

export type FakePair = {
  test_idx: number;
  train_idx: number;
  distance: number;
  cls: number;
};

export type LogRecord = { test_idx: number; train_idx: number; decision: Decision };

const DISTINCT_TO_CLOSE = 20;

export function patternImage(seed: number): number[] {
  return Array.from({ length: 784 }, (_, i) => (seed * 7 + i * 13) % 256);
}

export class FakeApi {
  log: LogRecord[] = [];
  offline = false;
  private judged = new Map<number, Decision>();

  constructor(
    private pairs: FakePair[],
    public classNames: string[] = Array.from({ length: 10 }, (_, i) => `class-${i}`),
  ) {}

  private candidates(cls: number): FakePair[] {
    return this.pairs.filter((p) => p.cls === cls);
  }

  private counts(cls: number) {
    const out = { similar: 0, distinct: 0, skip: 0 };
    for (const p of this.candidates(cls)) {
      const d = this.judged.get(p.test_idx);
      if (d) out[d] += 1;
    }
    return out;
  }

  private classClosed(cls: number): boolean {
    const c = this.counts(cls);
    if (c.distinct >= DISTINCT_TO_CLOSE) return true;
    return this.candidates(cls).every((p) => this.judged.has(p.test_idx));
  }

  currentClass(): number | null {
    for (let c = 0; c < 10; c++) if (!this.classClosed(c)) return c;
    return null;
  }

  private head(): FakePair | null {
    const cls = this.currentClass();
    if (cls === null) return null;
    return this.candidates(cls).find((p) => !this.judged.has(p.test_idx)) ?? null;
  }

  progressPayload(): Progress {
    const classes: Progress["classes"] = {};
    const totals = { similar: 0, distinct: 0, skip: 0 };
    let closed = 0;
    for (let c = 0; c < 10; c++) {
      const counts = this.counts(c);
      const isClosed = this.classClosed(c);
      if (isClosed) closed += 1;
      classes[String(c)] = { ...counts, closed: isClosed, candidates: this.candidates(c).length };
      totals.similar += counts.similar;
      totals.distinct += counts.distinct;
      totals.skip += counts.skip;
    }
    return {
      classes,
      totals,
      judged: this.judged.size,
      fraction_complete: closed / 10,
      current_class: this.currentClass(),
      complete: this.currentClass() === null,
    };
  }

  // --- ApiClient-compatible surface -----------------------------------------

  async session(): Promise<SessionInfo> {
    if (this.offline) throw new Error("offline");
    return {
      dataset: "fake-fashion",
      analyst: "test",
      class_names: this.classNames,
      ...this.progressPayload(),
    };
  }

  async progress(): Promise<Progress> {
    if (this.offline) throw new Error("offline");
    return this.progressPayload();
  }

  async nextPair(): Promise<PairResponse | CompleteResponse> {
    if (this.offline) throw new Error("offline");
    const head = this.head();
    if (!head) return { complete: true, progress: this.progressPayload() };
    return {
      complete: false,
      test_idx: head.test_idx,
      train_idx: head.train_idx,
      distance: head.distance,
      class: head.cls,
      class_name: this.classNames[head.cls],
      test_image: patternImage(head.test_idx),
      train_image: patternImage(head.train_idx + 100000),
      signals: {
        bbox_delta_px: 3,
        outline_agreement: 0.95,
        tone_delta: 4.0,
        mean_abs_pixel_diff: 11.5,
      },
      progress: this.progressPayload(),
    };
  }

  async submitVerdict(
    testIdx: number,
    trainIdx: number,
    decision: Decision,
  ): Promise<VerdictResult> {
    if (this.offline) return { kind: "network" };
    const head = this.head();
    if (!head || head.test_idx !== testIdx || head.train_idx !== trainIdx) {
      return { kind: "stale" };
    }
    this.log.push({ test_idx: testIdx, train_idx: trainIdx, decision });
    this.judged.set(testIdx, decision);
    return { kind: "ok", progress: this.progressPayload() };
  }
}

export function makePairs(perClass: number): FakePair[] {
  // globally interleaved by ascending distance, like a real ranking
  const pairs: FakePair[] = [];
  let n = 0;
  for (let rank = 0; rank < perClass; rank++) {
    for (let cls = 0; cls < 10; cls++) {
      pairs.push({
        test_idx: n,
        train_idx: 5000 + n,
        distance: 0.001 * (rank * 10 + cls),
        cls,
      });
      n += 1;
    }
  }
  return pairs;
}
