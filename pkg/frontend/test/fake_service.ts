// In-memory stand-in for the study service, speaking the same HTTP+JSON
// contract through a fetch-compatible function. Behaviour mirrors the
// server: idempotent pair issue, unknown-ward masking, decision counter,
// exhaustion when every pair is masked.

interface Judge {
  id: string;
  unknown: Set<string>;
  decisions: number;
  issued: [string, string] | null;
}

export interface SubmittedEvent {
  judge: string;
  kind: string;
  winner?: string;
  loser?: string;
  ward?: string;
  elapsed_ms?: number;
}

export class FakeStudyService {
  judges = new Map<string, Judge>();
  events: SubmittedEvent[] = [];
  issuedPairs: Array<[string, string]> = [];
  closed = false;
  failNextRequests = 0;
  private counter = 0;

  constructor(
    public studyId: string,
    public wards: string[],
    public recommendedMaximum: number | null = 50,
  ) {}

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    if (this.failNextRequests > 0) {
      this.failNextRequests -= 1;
      throw new TypeError('network');
    }
    const method = init?.method ?? 'GET';
    const registerMatch = url.match(/\/studies\/([^/]+)\/judges$/);
    if (registerMatch && method === 'POST') return this.register();
    const nextMatch = url.match(/\/studies\/[^/]+\/judges\/([^/]+)\/next$/);
    if (nextMatch) return this.next(nextMatch[1]);
    const judgeMatch = url.match(/\/studies\/[^/]+\/judges\/([^/]+)\/judgements$/);
    if (judgeMatch && method === 'POST') {
      return this.submit(judgeMatch[1], JSON.parse(String(init?.body)));
    }
    return json(404, { error: `no route for ${method} ${url}` });
  };

  private register(): Response {
    if (this.closed) return json(409, { error: 'study is closed' });
    this.counter += 1;
    const judge = {
      id: `judge-${this.counter}`,
      unknown: new Set<string>(),
      decisions: 0,
      issued: null,
    };
    this.judges.set(judge.id, judge);
    return json(200, { judge_id: judge.id });
  }

  private availablePairs(judge: Judge): Array<[string, string]> {
    const usable = this.wards.filter((w) => !judge.unknown.has(w));
    const pairs: Array<[string, string]> = [];
    for (let i = 0; i < usable.length; i += 1) {
      for (let j = i + 1; j < usable.length; j += 1) {
        pairs.push([usable[i], usable[j]]);
      }
    }
    return pairs;
  }

  private next(judgeId: string): Response {
    const judge = this.judges.get(judgeId);
    if (!judge) return json(404, { error: 'unknown judge' });
    if (this.closed) return json(409, { error: 'study is closed' });
    if (judge.issued === null) {
      const pairs = this.availablePairs(judge);
      if (pairs.length === 0) return json(410, { error: 'no pairs left' });
      const pick = pairs[this.issuedPairs.length % pairs.length];
      judge.issued = pick;
      this.issuedPairs.push(pick);
    }
    const [left, right] = judge.issued;
    return json(200, {
      left: { id: left, name: left.toUpperCase(), geometry: squareGeometry() },
      right: { id: right, name: right.toUpperCase(), geometry: null },
      issued_at: new Date().toISOString(),
      comparisons: judge.decisions,
      recommended_maximum: this.recommendedMaximum,
    });
  }

  private submit(judgeId: string, payload: SubmittedEvent): Response {
    const judge = this.judges.get(judgeId);
    if (!judge) return json(404, { error: 'unknown judge' });
    if (judge.issued === null) return json(409, { error: 'no pair issued' });
    this.events.push({ ...payload, judge: judgeId });
    if (payload.kind === 'decision') {
      judge.decisions += 1;
    } else if (payload.kind === 'unknown' && payload.ward) {
      judge.unknown.add(payload.ward);
    }
    judge.issued = null;
    return json(200, { status: 'ok', comparisons: judge.decisions });
  }
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'content-type': 'application/json' },
  });
}

function squareGeometry() {
  return {
    type: 'Polygon',
    coordinates: [[[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]],
  };
}
