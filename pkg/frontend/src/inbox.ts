/**
 * Patient-side access-request inbox.
 *
 * Approving wraps the patient data key for the requesting doctor — the
 * wrapping happens inside the service, so key material never reaches the
 * browser — and commits an on-chain grant. Denial closes the request
 * locally and leaves the doctor's reads forbidden.
 */

import type { ConsoleClient } from "./client.js";

export type RequestState = "pending" | "granted" | "denied";

export interface InboxEntry {
  doctor: string;
  scope: string;
  state: RequestState;
  grantId?: string;
}

export class AccessInbox {
  readonly entries: InboxEntry[] = [];

  constructor(private readonly client: ConsoleClient) {}

  /** Merge the service's pending list, preserving locally closed entries. */
  async refresh(): Promise<void> {
    const res = await this.client.listRequests();
    for (const req of res.pending) {
      if (!this.entries.some((e) => e.doctor === req.doctor)) {
        this.entries.push({
          doctor: req.doctor,
          scope: req.scope.kind,
          state: "pending",
        });
      }
    }
  }

  private entry(doctor: string): InboxEntry {
    const hit = this.entries.find((e) => e.doctor === doctor);
    if (hit === undefined) {
      throw new Error(`no request from ${doctor}`);
    }
    return hit;
  }

  async approve(doctor: string): Promise<string> {
    const entry = this.entry(doctor);
    const res = await this.client.grantAccess(doctor);
    entry.state = "granted";
    entry.grantId = res.grant_id;
    return res.grant_id;
  }

  async deny(doctor: string): Promise<void> {
    const entry = this.entry(doctor);
    await this.client.denyAccess(doctor);
    entry.state = "denied";
  }

  get pendingCount(): number {
    return this.entries.filter((e) => e.state === "pending").length;
  }
}
