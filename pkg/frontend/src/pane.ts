/** One chat pane: a session, its transcript, and its decode controls.
 *
 * The pane owns no decoding logic; it renders exactly what the service
 * returns.  All text lands in the DOM through textContent, so arbitrary
 * model output (or user input) cannot inject markup.
 */

import { ApiError, Client, DecodeSettings, DEFAULT_SETTINGS } from "./api.js";

export type EntryKind = "user" | "model" | "error" | "notice";

export interface TranscriptEntry {
  kind: EntryKind;
  text: string;
  logProb?: number;
  /** Re-runs the failed action (network errors only). */
  retry?: () => Promise<void>;
  /** Starts a fresh session (expiry notices only). */
  newSession?: () => Promise<void>;
}

export interface SettingsUpdate {
  mode?: string;
  beam_width?: number;
  temperature?: number;
  seed?: number;
}

export function validateSettings(update: SettingsUpdate): string | null {
  if (update.mode !== undefined && update.mode !== "map" && update.mode !== "sample") {
    return `mode must be "map" or "sample", got ${JSON.stringify(update.mode)}`;
  }
  if (update.beam_width !== undefined && (!Number.isInteger(update.beam_width) || update.beam_width < 1)) {
    return `beam width must be an integer >= 1, got ${update.beam_width}`;
  }
  if (update.temperature !== undefined && !(update.temperature > 0)) {
    return `temperature must be positive, got ${update.temperature}`;
  }
  if (update.seed !== undefined && !Number.isInteger(update.seed)) {
    return `seed must be an integer, got ${update.seed}`;
  }
  return null;
}

export class ChatPane {
  readonly transcript: TranscriptEntry[] = [];
  settings: DecodeSettings;
  sessionId: string | null = null;
  busy = false;
  lastValidationError: string | null = null;
  private readonly listeners: (() => void)[] = [];

  constructor(
    private readonly client: Client,
    initial: Partial<DecodeSettings> = {},
  ) {
    this.settings = { ...DEFAULT_SETTINGS, ...initial };
  }

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private changed(): void {
    for (const fn of this.listeners) fn();
  }

  async start(): Promise<void> {
    this.sessionId = await this.client.createSession(this.settings);
    this.changed();
  }

  /** Applies settings to subsequent turns only; invalid values are
   * rejected and the previous settings stay in force. */
  configure(update: SettingsUpdate): boolean {
    const problem = validateSettings(update);
    if (problem !== null) {
      this.lastValidationError = problem;
      this.changed();
      return false;
    }
    this.lastValidationError = null;
    this.settings = { ...this.settings, ...update } as DecodeSettings;
    this.changed();
    return true;
  }

  async send(text: string): Promise<void> {
    if (!text.trim() || this.busy) return;
    if (this.sessionId === null) await this.start();
    const sessionId = this.sessionId!;
    const settings = { ...this.settings }; // pin what this turn uses
    this.busy = true;
    const userEntry: TranscriptEntry = { kind: "user", text };
    this.transcript.push(userEntry);
    this.changed();
    try {
      const turn = await this.client.sendTurn(sessionId, text, settings);
      this.transcript.push({ kind: "model", text: turn.text, logProb: turn.log_prob });
    } catch (err) {
      if (err instanceof ApiError && err.sessionExpired) {
        // keep everything on screen; offer a fresh session
        this.sessionId = null;
        this.transcript.push({
          kind: "notice",
          text: "session expired; start a new session to continue (transcript kept)",
          newSession: async () => {
            await this.start();
          },
        });
      } else {
        const detail = err instanceof Error ? err.message : String(err);
        const errorEntry: TranscriptEntry = {
          kind: "error",
          text: `request failed: ${detail}`,
          retry: async () => {
            // drop the error entry and the unanswered user entry, then resend
            this.remove(errorEntry);
            this.remove(userEntry);
            await this.send(text);
          },
        };
        this.transcript.push(errorEntry);
      }
    } finally {
      this.busy = false;
      this.changed();
    }
  }

  private remove(entry: TranscriptEntry): void {
    const idx = this.transcript.lastIndexOf(entry);
    if (idx >= 0) this.transcript.splice(idx, 1);
  }
}
