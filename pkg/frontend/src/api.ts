// Typed client for the /v1 HTTP contract. The console never computes
// rankings or scores itself; everything rendered comes from these payloads.

export interface Utterance {
  message_id: string;
  speaker: string;
  text: string;
}

export interface ResolutionSummary {
  verb: string;
  entity: string;
  message_id?: string;
}

export interface QueryResult {
  issue_id: string;
  score: number;
  issue_text: string;
  diagnostics: Utterance[];
  resolution_summaries: ResolutionSummary[];
  opened_at: string;
}

export interface QueryResponse {
  results: QueryResult[];
  snapshot: string;
}

export interface IssueRecord {
  schema: number;
  conversation_id: string;
  issue_text: string;
  category: string;
  diagnostics: Utterance[];
  resolutions: Utterance[];
  resolution_summaries: ResolutionSummary[];
  participants: string[];
  opened_at: string;
  closed_at: string;
}

export type Verdict = 'relevant' | 'not_relevant';
export type QueryMode = 'M1' | 'M2';

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path;
  }

  async query(text: string, mode: QueryMode, k: number, signal?: AbortSignal): Promise<QueryResponse> {
    const response = await fetch(this.url('/v1/query'), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ text, mode, k }),
      signal,
    });
    if (!response.ok) {
      throw new ApiError(`query failed (${response.status})`, response.status);
    }
    return (await response.json()) as QueryResponse;
  }

  async issue(issueId: string): Promise<IssueRecord> {
    const response = await fetch(this.url(`/v1/issues/${encodeURIComponent(issueId)}`));
    if (!response.ok) {
      throw new ApiError(`issue lookup failed (${response.status})`, response.status);
    }
    return (await response.json()) as IssueRecord;
  }

  async feedback(queryId: string, resultIssueId: string, verdict: Verdict, user: string): Promise<void> {
    const response = await fetch(this.url('/v1/feedback'), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({
        query_id: queryId,
        result_issue_id: resultIssueId,
        verdict,
        user,
      }),
    });
    if (!response.ok) {
      throw new ApiError(`feedback rejected (${response.status})`, response.status);
    }
  }
}
