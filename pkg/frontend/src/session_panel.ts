/**
 * View model for the live session panel.
 *
 * Frames arrive with dense sequence numbers starting at 1; the panel keeps
 * the last acknowledged seq so a reconnect resumes with `after=lastSeq` and
 * never double-plots. Every displayed fact (chart point, state badge, alert
 * banner) originates from a service frame — the panel computes nothing
 * medical itself. The patient-facing view never shows the trial arm.
 */

import type { ConsoleClient } from "./client.js";
import type { TelemetryFrame } from "./types.js";

export interface ChartPoint {
  elapsedS: number;
  currentMa: number;
}

export interface AlertBanner {
  ruleIds: string[];
  atSeq: number;
}

export class SessionPanel {
  readonly points: ChartPoint[] = [];
  stateBadge = "Idle";
  alert: AlertBanner | null = null;
  lastSeq = 0;
  abortPending = false;

  private startAt: number | null = null;

  constructor(
    private readonly client: ConsoleClient,
    readonly sessionId: string,
  ) {}

  /** Append a batch of frames (already in seq order from the service). */
  ingest(frames: TelemetryFrame[]): void {
    for (const frame of frames) {
      if (frame.seq <= this.lastSeq) {
        continue; // replayed frame after a resume overlap
      }
      const at = Date.parse(frame.at);
      if (this.startAt === null) {
        this.startAt = at;
      }
      this.points.push({
        elapsedS: Math.round((at - this.startAt) / 1000) + 1,
        currentMa: frame.current / 1000,
      });
      if (frame.state !== null) {
        this.stateBadge = frame.state;
        if (frame.state === "Aborted" && this.alert === null) {
          // aborts triggered by the monitoring rules carry the rule ids in
          // the reason surfaced by the audit trail; the immediate banner
          // just flags that the session stopped
          this.alert = { ruleIds: [], atSeq: frame.seq };
        }
      }
      this.lastSeq = frame.seq;
    }
  }

  /** Render an anomaly banner; called when an alert event is observed. */
  showAlert(ruleIds: string[]): void {
    this.alert = { ruleIds: [...ruleIds].sort(), atSeq: this.lastSeq };
  }

  /** Pull any frames newer than the last acknowledged one. */
  async poll(): Promise<number> {
    const res = await this.client.streamTelemetry(this.sessionId, this.lastSeq);
    this.ingest(res.frames);
    return res.frames.length;
  }

  /**
   * Issue the abort call. The button is disabled (abortPending) until the
   * server acknowledges, so a double click sends exactly one request.
   */
  async abort(reason: string): Promise<boolean> {
    if (this.abortPending) {
      return false;
    }
    this.abortPending = true;
    try {
      const res = await this.client.abortSession(this.sessionId, reason);
      this.stateBadge = res.state;
      return true;
    } finally {
      this.abortPending = false;
    }
  }
}
