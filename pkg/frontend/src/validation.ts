/**
 * Client-side prescription form pre-validation.
 *
 * These checks mirror the server's dosing validator exactly — same ranges,
 * same violation field names, same `allowed` strings — so the form can show
 * inline errors before any request is made, and the server verdict never
 * disagrees with what the user was shown. Parity is pinned by a test table
 * generated from the server validator itself.
 */

import type { PrescriptionForm, ValidationResult, Violation } from "./types.js";

export const CURRENT_MIN_MA = 1.0;
export const CURRENT_MAX_MA = 2.0;
export const DURATION_MIN_MIN = 5;
export const DURATION_MAX_MIN = 30;
export const SESSIONS_PER_WEEK_MAX = 5;
export const WEEKS_MAX = 8;

export function validateForm(form: PrescriptionForm): ValidationResult {
  const violations: Violation[] = [];
  if (!(form.current_ma >= CURRENT_MIN_MA && form.current_ma <= CURRENT_MAX_MA)) {
    violations.push({
      field: "current_setpoint",
      observed: form.current_ma,
      allowed: `[${CURRENT_MIN_MA.toFixed(1)},${CURRENT_MAX_MA.toFixed(1)}] mA`,
    });
  }
  if (!(form.duration_min >= DURATION_MIN_MIN && form.duration_min <= DURATION_MAX_MIN)) {
    violations.push({
      field: "session_duration",
      observed: form.duration_min,
      allowed: `[${DURATION_MIN_MIN},${DURATION_MAX_MIN}] min`,
    });
  }
  if (!(form.per_week >= 1 && form.per_week <= SESSIONS_PER_WEEK_MAX)) {
    violations.push({
      field: "sessions_per_week",
      observed: form.per_week,
      allowed: `[1,${SESSIONS_PER_WEEK_MAX}]`,
    });
  }
  if (!(form.weeks >= 1 && form.weeks <= WEEKS_MAX)) {
    violations.push({
      field: "total_weeks",
      observed: form.weeks,
      allowed: `[1,${WEEKS_MAX}]`,
    });
  }
  return { ok: violations.length === 0, violations };
}

/** True when every field validates; the submit button binds to this. */
export function submitEnabled(form: PrescriptionForm): boolean {
  return validateForm(form).ok && form.patient.length > 0;
}

/** Inline message for one form field, or null when the field is fine. */
export function fieldError(form: PrescriptionForm, field: string): string | null {
  const hit = validateForm(form).violations.find((v) => v.field === field);
  return hit ? `${hit.observed} outside ${hit.allowed}` : null;
}
