/**
 * Daily well-being entry with idempotent commits.
 *
 * One token per logical entry: a network failure keeps the pending entry and
 * its token, and retrying resubmits with the same token, so the server
 * applies it at most once.  Nothing is rendered until the server's
 * acknowledgment arrives (no optimistic UI for commits).
 */

import { newEntryToken, type SessionApi } from "./api.js";
import type { MeasurementResponse } from "./types.js";

interface PendingEntry {
  y: number;
  token: string;
}

export class DailyEntryController {
  private pending: PendingEntry | null = null;
  private tokenFactory: () => string;

  constructor(
    private readonly api: SessionApi,
    private readonly onCommitted: (result: MeasurementResponse, y: number) => void,
    tokenFactory?: () => string,
  ) {
    this.tokenFactory = tokenFactory ?? newEntryToken;
  }

  get hasPendingRetry(): boolean {
    return this.pending !== null;
  }

  /**
   * Commit a new entry, or retry the pending one if the last attempt failed.
   * A new value while a retry is pending replaces the entry AND its token
   * (it is a different logical entry).
   */
  async submit(y?: number): Promise<MeasurementResponse> {
    if (y !== undefined && (this.pending === null || this.pending.y !== y)) {
      this.pending = { y, token: this.tokenFactory() };
    }
    if (this.pending === null) {
      throw new Error("no entry to submit");
    }
    const entry = this.pending;
    const result = await this.api.submitMeasurement(entry.y, entry.token);
    this.pending = null;
    this.onCommitted(result, entry.y);
    return result;
  }
}
