/** Typed client for the MPI registry HTTP API.
 *
 * The console mutates the registry only through POST /token and
 * POST /review-queue/{id}/decision; everything else is read-only.
 */

export interface TokenResponse {
  access_token: string;
  token_type: string;
  expires_in: number;
  scope: string;
}

export interface FieldComparison {
  field: string;
  agreed: boolean | null;
  weight: number;
}

export interface MatchResult {
  pair: [string, string];
  per_field: FieldComparison[];
  total: number;
  decision: string;
}

export interface ReviewItem {
  id: string;
  result: MatchResult;
  state: "PENDING" | "APPROVED" | "REJECTED";
  created_at: string;
  pre_approved: boolean;
  decided_at: string | null;
  decided_by: string | null;
}

export interface PatientView {
  phn: string;
  profile: {
    family_name: string;
    given_names: string[];
    date_of_birth: string;
    sex: string;
    address_lines: string[];
    contact_number: string | null;
    anonymity_requested: boolean;
  };
  identifiers: { kind: string; value: string; issuing_authority?: string }[];
  status: { kind: string; survivor?: string };
  version: number;
  resolves_to?: string;
}

/** Registry error body: { error: CODE, detail, context? }. */
export class ApiError extends Error {
  constructor(
    public readonly code: string,
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
  }
}

/** 401 from any endpoint: the session must re-login. */
export class AuthExpiredError extends ApiError {}

type FetchLike = typeof fetch;

async function raiseForError(res: Response): Promise<void> {
  if (res.ok) return;
  let code = "HTTP_ERROR";
  let detail = `HTTP ${res.status}`;
  try {
    const body = await res.json();
    if (typeof body?.error === "string") code = body.error;
    if (typeof body?.detail === "string") detail = body.detail;
  } catch {
    /* non-JSON error body; keep the generic code */
  }
  if (res.status === 401) throw new AuthExpiredError(code, res.status, detail);
  throw new ApiError(code, res.status, detail);
}

export class RegistryClient {
  private token: string | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  get loggedIn(): boolean {
    return this.token !== null;
  }

  logout(): void {
    this.token = null;
  }

  async login(clientId: string, clientSecret: string): Promise<TokenResponse> {
    const res = await this.fetchImpl(`${this.baseUrl}/token`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ client_id: clientId, client_secret: clientSecret }),
    });
    await raiseForError(res);
    const body = (await res.json()) as TokenResponse;
    this.token = body.access_token;
    return body;
  }

  private async request(method: string, path: string, body?: unknown): Promise<Response> {
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    if (body !== undefined) headers["Content-Type"] = "application/json";
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    await raiseForError(res);
    return res;
  }

  async reviewQueue(state: "PENDING" | "ALL" = "PENDING"): Promise<ReviewItem[]> {
    const res = await this.request("GET", `/review-queue?state=${state}`);
    return (await res.json()) as ReviewItem[];
  }

  async patient(phn: string): Promise<PatientView> {
    const res = await this.request("GET", `/patients/${phn}`);
    return (await res.json()) as PatientView;
  }

  async decide(
    itemId: string,
    decision: "APPROVE" | "REJECT",
    survivorChoice?: string,
  ): Promise<ReviewItem> {
    const res = await this.request("POST", `/review-queue/${itemId}/decision`, {
      decision,
      survivor_choice: survivorChoice ?? null,
    });
    return (await res.json()) as ReviewItem;
  }
}
