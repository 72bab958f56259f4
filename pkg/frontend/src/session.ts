// Judge session state machine: enrol once, then a strict loop of
// show-pair -> answer -> acknowledge. Exactly one request is ever in
// flight; answers while a submission is pending are dropped, so rapid
// double-clicks cannot submit twice.

import {
  Acknowledgement,
  ExhaustedError,
  PairView,
  StudyApi,
  StudyClosedError,
} from './api.js';

export type Choice = 'left' | 'right' | 'skip' | 'unknown-left' | 'unknown-right';

export type SessionPhase =
  | { phase: 'loading' }
  | { phase: 'judging'; pair: PairView }
  | { phase: 'done'; reason: string }
  | { phase: 'closed'; reason: string }
  | { phase: 'error'; reason: string };

export interface SessionView {
  judgeId: string;
  comparisons: number;
  recommendedMaximum: number | null;
  state: SessionPhase;
}

export interface SessionOptions {
  storage?: Pick<Storage, 'getItem' | 'setItem' | 'removeItem'>;
  now?: () => number;
  retries?: number;
  backoffMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class JudgeSession {
  private judgeId = '';
  private comparisons = 0;
  private recommendedMaximum: number | null = null;
  private state: SessionPhase = { phase: 'loading' };
  private pairShownAt = 0;
  private busy = false;
  private listeners: Array<(view: SessionView) => void> = [];

  private storage: SessionOptions['storage'];
  private now: () => number;
  private retries: number;
  private backoffMs: number;
  private sleep: (ms: number) => Promise<void>;

  constructor(
    private api: StudyApi,
    private studyId: string,
    options: SessionOptions = {},
  ) {
    this.storage = options.storage ?? globalThis.localStorage;
    this.now = options.now ?? (() => Date.now());
    this.retries = options.retries ?? 3;
    this.backoffMs = options.backoffMs ?? 400;
    this.sleep = options.sleep ?? defaultSleep;
  }

  onChange(listener: (view: SessionView) => void): void {
    this.listeners.push(listener);
  }

  view(): SessionView {
    return {
      judgeId: this.judgeId,
      comparisons: this.comparisons,
      recommendedMaximum: this.recommendedMaximum,
      state: this.state,
    };
  }

  private emit(): void {
    const snapshot = this.view();
    for (const listener of this.listeners) listener(snapshot);
  }

  private tokenKey(): string {
    return `cj-judge-token:${this.studyId}`;
  }

  /** Network calls retry on rejection (not on HTTP errors) with backoff. */
  private async withRetry<T>(call: () => Promise<T>): Promise<T> {
    let attempt = 0;
    for (;;) {
      try {
        return await call();
      } catch (err) {
        const transient = !(err instanceof Error) || err.name === 'TypeError'
          || err.message === 'network';
        if (!transient || attempt >= this.retries) throw err;
        await this.sleep(this.backoffMs * 2 ** attempt);
        attempt += 1;
      }
    }
  }

  async enrol(): Promise<void> {
    try {
      const stored = this.storage?.getItem(this.tokenKey());
      if (stored) {
        this.judgeId = stored;
      } else {
        const { judge_id } = await this.withRetry(() =>
          this.api.registerJudge(this.studyId),
        );
        this.judgeId = judge_id;
        this.storage?.setItem(this.tokenKey(), judge_id);
      }
      await this.fetchPair();
    } catch (err) {
      this.fail(err);
      this.emit();
    }
  }

  private async fetchPair(): Promise<void> {
    try {
      const pair = await this.withRetry(() =>
        this.api.nextPair(this.studyId, this.judgeId),
      );
      this.comparisons = pair.comparisons;
      this.recommendedMaximum = pair.recommended_maximum;
      this.pairShownAt = this.now();
      this.state = { phase: 'judging', pair };
    } catch (err) {
      this.fail(err);
    }
    this.emit();
  }

  /** Submit the judge's answer for the pair on screen. */
  async answer(choice: Choice): Promise<void> {
    if (this.busy || this.state.phase !== 'judging') return;
    this.busy = true;
    this.emit(); // lets the UI disable its controls immediately
    const pair = this.state.pair;
    const elapsed = this.now() - this.pairShownAt;
    try {
      const ack = await this.withRetry(() =>
        this.api.submit(this.studyId, this.judgeId, buildPayload(choice, pair, elapsed)),
      );
      this.applyAck(ack);
      await this.fetchPair();
    } catch (err) {
      this.fail(err);
    } finally {
      // stays busy until the next pair is on screen, then re-render
      // with the controls enabled
      this.busy = false;
      this.emit();
    }
  }

  isBusy(): boolean {
    return this.busy;
  }

  private applyAck(ack: Acknowledgement): void {
    this.comparisons = ack.comparisons;
  }

  private fail(err: unknown): void {
    if (err instanceof ExhaustedError) {
      this.state = { phase: 'done', reason: 'No more comparisons for you — thank you!' };
    } else if (err instanceof StudyClosedError) {
      this.state = { phase: 'closed', reason: 'This study has closed.' };
    } else {
      const reason = err instanceof Error ? err.message : String(err);
      this.state = { phase: 'error', reason };
    }
  }
}

function buildPayload(choice: Choice, pair: PairView, elapsedMs: number) {
  const elapsed_ms = Math.max(0, Math.round(elapsedMs));
  switch (choice) {
    case 'left':
      return { kind: 'decision', winner: pair.left.id, loser: pair.right.id, elapsed_ms } as const;
    case 'right':
      return { kind: 'decision', winner: pair.right.id, loser: pair.left.id, elapsed_ms } as const;
    case 'skip':
      return { kind: 'skip', elapsed_ms } as const;
    case 'unknown-left':
      return { kind: 'unknown', ward: pair.left.id, elapsed_ms } as const;
    case 'unknown-right':
      return { kind: 'unknown', ward: pair.right.id, elapsed_ms } as const;
  }
}
