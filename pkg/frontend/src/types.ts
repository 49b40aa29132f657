/**
 * Payload shapes of the service API (see ../docs/api.md in the backend
 * repository root). The console renders these and nothing else: it computes
 * no medical values beyond client-side form pre-validation.
 */

export type Role = "authority" | "doctor" | "patient";

export type ErrorStatus =
  | "unauthenticated"
  | "forbidden"
  | "not_found"
  | "bad_request"
  | "timeout";

export interface ApiFailure {
  status: ErrorStatus;
  detail: string;
}

export interface Violation {
  field: string;
  observed: number | string;
  allowed: string;
}

export interface ValidationResult {
  ok: boolean;
  violations: Violation[];
}

export interface PrescriptionForm {
  patient: string;
  current_ma: number;
  duration_min: number;
  per_week: number;
  weeks: number;
}

/** One telemetry sample as streamed by the service. */
export interface TelemetryFrame {
  seq: number;
  at: string;
  current: number;
  state: string | null;
}

export interface StreamResponse {
  session: string;
  frames: TelemetryFrame[];
}

export interface SessionStarted {
  session: string;
  state?: string;
  denied?: string;
}

export interface RecordSummary {
  content_id: string;
  session: string;
  batch_seq: number;
}

export interface RecordBody {
  tx: string;
  content_id: string;
  session: string;
  batch_seq: number;
  samples: { at: string; current: number }[];
}

export interface PendingRequest {
  doctor: string;
  scope: { kind: string };
}

export interface AuditEvent {
  height: number;
  kind: string;
  verdict: string | null;
  reason: string;
  tx: string;
  detail: Record<string, unknown>;
}

export interface AuditReport {
  patient: string;
  events: AuditEvent[];
  chain_ok: boolean;
  first_invalid_height: number | null;
}
