// Typed client for the study service's HTTP+JSON endpoints.

export interface PolygonGeometry {
  type: 'Polygon' | 'MultiPolygon';
  coordinates: number[][][] | number[][][][];
}

export interface WardDescriptor {
  id: string;
  name: string;
  geometry: PolygonGeometry | null;
}

export interface PairView {
  left: WardDescriptor;
  right: WardDescriptor;
  issued_at: string | null;
  comparisons: number;
  recommended_maximum: number | null;
}

export type JudgementPayload =
  | { kind: 'decision'; winner: string; loser: string; elapsed_ms: number }
  | { kind: 'skip'; elapsed_ms: number }
  | { kind: 'unknown'; ward: string; elapsed_ms: number };

export interface Acknowledgement {
  status: string;
  comparisons: number;
}

export class StudyClosedError extends Error {}
export class ExhaustedError extends Error {}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = typeof fetch;

async function parseError(response: Response): Promise<never> {
  let message = `request failed (${response.status})`;
  try {
    const body = await response.json();
    if (body && typeof body.error === 'string') message = body.error;
  } catch {
    // keep the generic message
  }
  if (response.status === 410) throw new ExhaustedError(message);
  if (response.status === 409) throw new StudyClosedError(message);
  throw new ApiError(response.status, message);
}

export class StudyApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) await parseError(response);
    return response.json() as Promise<T>;
  }

  registerJudge(studyId: string): Promise<{ judge_id: string }> {
    return this.request(`/studies/${studyId}/judges`, { method: 'POST' });
  }

  nextPair(studyId: string, judgeId: string): Promise<PairView> {
    return this.request(`/studies/${studyId}/judges/${judgeId}/next`);
  }

  submit(
    studyId: string,
    judgeId: string,
    payload: JudgementPayload,
  ): Promise<Acknowledgement> {
    return this.request(`/studies/${studyId}/judges/${judgeId}/judgements`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(payload),
    });
  }
}
