/**
 * Typed client for the review service API. All mutations carry the client's
 * current revision; the server answers 409 when it is stale and the caller
 * must refetch before retrying.
 */

export type Verdict = "unjudged" | "accurate" | "inaccurate";

export interface Piece {
  text: string;
  verdict: Verdict;
}

export interface Sentence {
  pair: number;
  text: string;
  pieces: Piece[];
  category: "CA" | "CI" | "PA" | null;
}

export interface Pair {
  image_id: string;
  uri: string;
  caption: string;
}

export interface SessionSnapshot {
  session_id: string;
  revision: number;
  complete: boolean;
  pairs: Pair[];
  sentences: Sentence[];
}

export interface SessionSummary {
  session_id: string;
  revision: number;
  complete: boolean;
  pairs: number;
  sentences: number;
}

export interface QaReport {
  session_id: string;
  revision: number;
  partial: boolean;
  judged_sentences: number;
  total_sentences: number;
  ca: number;
  ci: number;
  pa: number;
  pa_pieces: number;
  pa_pieces_accurate: number;
  piece_accuracy: number;
  overall: number | null;
  display: string;
}

export class ConflictError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ConflictError";
  }
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseJson(resp: Response): Promise<unknown> {
  const text = await resp.text();
  try {
    return JSON.parse(text);
  } catch {
    throw new ApiError(`non-JSON response (${resp.status})`, resp.status);
  }
}

export class ReviewApi {
  constructor(readonly base: string = "") {}

  private async request(path: string, body?: unknown): Promise<unknown> {
    const resp = await fetch(this.base + path, body === undefined ? {} : {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    const payload = await parseJson(resp);
    if (resp.status === 409) {
      throw new ConflictError((payload as { error?: string }).error ?? "revision conflict");
    }
    if (!resp.ok) {
      throw new ApiError((payload as { error?: string }).error ?? `HTTP ${resp.status}`, resp.status);
    }
    return payload;
  }

  async listSessions(): Promise<SessionSummary[]> {
    const doc = (await this.request("/api/sessions")) as { sessions: SessionSummary[] };
    return doc.sessions;
  }

  getSession(id: string): Promise<SessionSnapshot> {
    return this.request(`/api/sessions/${id}`) as Promise<SessionSnapshot>;
  }

  getReport(id: string, partial = true): Promise<QaReport> {
    const suffix = partial ? "?partial=1" : "";
    return this.request(`/api/sessions/${id}/report${suffix}`) as Promise<QaReport>;
  }

  async verdict(
    id: string, sentence: number, piece: number, verdict: Verdict, revision: number,
  ): Promise<number> {
    const out = (await this.request(`/api/sessions/${id}/verdict`, {
      sentence, piece, verdict, revision,
    })) as { revision: number };
    return out.revision;
  }

  async splitPiece(
    id: string, sentence: number, piece: number, offset: number, revision: number,
  ): Promise<number> {
    const out = (await this.request(`/api/sessions/${id}/split`, {
      sentence, piece, offset, revision,
    })) as { revision: number };
    return out.revision;
  }

  async mergePiece(
    id: string, sentence: number, piece: number, revision: number,
  ): Promise<number> {
    const out = (await this.request(`/api/sessions/${id}/merge`, {
      sentence, piece, revision,
    })) as { revision: number };
    return out.revision;
  }

  imageUrl(id: string, pairIndex: number): string {
    return `${this.base}/api/sessions/${id}/image/${pairIndex}`;
  }
}
