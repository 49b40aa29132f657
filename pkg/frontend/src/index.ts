export * from "./types.js";
export * from "./validation.js";
export { ApiError, ConsoleClient } from "./client.js";
export type { Signer, Transport } from "./client.js";
export { SessionPanel } from "./session_panel.js";
export type { AlertBanner, ChartPoint } from "./session_panel.js";
export { AccessInbox } from "./inbox.js";
export type { InboxEntry, RequestState } from "./inbox.js";
