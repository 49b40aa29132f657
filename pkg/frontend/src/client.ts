/**
 * Thin typed client for the service HTTP API.
 *
 * The console talks to the service and nothing else — no ledger or store
 * access from the browser. Key material never enters this module: login
 * takes a `Signer` callback so the signing key can live in whatever vault
 * the deployment uses.
 */

import type {
  ApiFailure,
  AuditReport,
  PendingRequest,
  RecordBody,
  RecordSummary,
  SessionStarted,
  StreamResponse,
  ValidationResult,
} from "./types.js";

/** Signs a hex-encoded nonce, returning a hex-encoded signature. */
export type Signer = (nonceHex: string) => Promise<string>;

/** Minimal fetch shape so tests can substitute a transport. */
export type Transport = (
  url: string,
  init: { method: string; headers: Record<string, string>; body: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(
    public readonly status: ApiFailure["status"],
    public readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

export class ConsoleClient {
  private token: string | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly transport: Transport,
  ) {}

  private async post(path: string, body: unknown): Promise<unknown> {
    const res = await this.transport(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    const payload = (await res.json()) as Record<string, unknown>;
    if (res.status >= 400) {
      throw new ApiError(
        (payload.status as ApiFailure["status"]) ?? "bad_request",
        String(payload.detail ?? res.status),
      );
    }
    return payload;
  }

  get authenticated(): boolean {
    return this.token !== null;
  }

  async login(caller: string, signer: Signer): Promise<void> {
    const challenge = (await this.post("/v1/auth/challenge", { caller })) as {
      nonce: string;
    };
    const signature = await signer(challenge.nonce);
    const session = (await this.post("/v1/auth/login", {
      caller,
      signature,
    })) as { token: string };
    this.token = session.token;
  }

  async call<T>(method: string, params: Record<string, unknown>): Promise<T> {
    if (this.token === null) {
      throw new ApiError("unauthenticated", "login first");
    }
    return (await this.post("/v1/call", {
      method,
      token: this.token,
      params,
    })) as T;
  }

  // Typed wrappers for the calls the console actually makes.

  validatePrescription(p: {
    current_ma: number;
    duration_min: number;
    per_week: number;
    weeks: number;
  }): Promise<ValidationResult> {
    return this.call("validate_prescription", p);
  }

  prescribe(p: Record<string, unknown>): Promise<{ prescription_id: string }> {
    return this.call("prescribe", p);
  }

  startSession(patient: string): Promise<SessionStarted> {
    return this.call("start_session", { patient });
  }

  abortSession(session: string, reason: string): Promise<{ state: string }> {
    return this.call("abort_session", { session, reason });
  }

  streamTelemetry(session: string, after: number): Promise<StreamResponse> {
    return this.call("stream_telemetry", { session, after });
  }

  listRequests(): Promise<{ pending: PendingRequest[] }> {
    return this.call("list_requests", {});
  }

  grantAccess(doctor: string): Promise<{ grant_id: string }> {
    return this.call("grant_access", { doctor });
  }

  denyAccess(doctor: string): Promise<{ denied: string }> {
    return this.call("deny_access", { doctor });
  }

  listRecords(patient: string): Promise<{ records: RecordSummary[] }> {
    return this.call("list_records", { patient });
  }

  readRecord(patient: string, contentId: string): Promise<RecordBody> {
    return this.call("read_record", { patient, content_id: contentId });
  }

  audit(patient: string): Promise<AuditReport> {
    return this.call("audit", { patient });
  }
}
