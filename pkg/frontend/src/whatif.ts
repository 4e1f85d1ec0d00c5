/**
 * What-if panel: live hypothetical doses for candidate padding, threshold,
 * and well-being values.  Queries only the what-if endpoint (never the
 * commit endpoint); an explicit apply action goes to the constraint
 * endpoint.  Queries are debounced while sliders move.
 */

import type { SessionApi } from "./api.js";
import type { WhatIfResponse } from "./types.js";

export interface WhatIfPanelState {
  candidateDelta: number | null;
  candidateYMin: number | null;
  hypotheticalY: number | null;
  result: WhatIfResponse | null;
  error: string | null;
}

export class WhatIfPanel {
  readonly state: WhatIfPanelState = {
    candidateDelta: null,
    candidateYMin: null,
    hypotheticalY: null,
    result: null,
    error: null,
  };

  private timer: ReturnType<typeof setTimeout> | null = null;
  private inflight = 0;

  constructor(
    private readonly api: SessionApi,
    private readonly onUpdate: (state: WhatIfPanelState) => void,
    private readonly debounceMs = 150,
  ) {}

  setDelta(delta: number | null): void {
    this.state.candidateDelta = delta;
    this.scheduleQuery();
  }

  setYMin(yMin: number | null): void {
    this.state.candidateYMin = yMin;
    this.scheduleQuery();
  }

  setHypotheticalY(y: number | null): void {
    this.state.hypotheticalY = y;
    this.scheduleQuery();
  }

  private scheduleQuery(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.queryNow();
    }, this.debounceMs);
  }

  /** Fire the hypothetical query immediately (used on panel open). */
  async queryNow(): Promise<void> {
    const ticket = ++this.inflight;
    try {
      const result = await this.api.whatIf({
        delta: this.state.candidateDelta ?? undefined,
        y_min: this.state.candidateYMin ?? undefined,
        y: this.state.hypotheticalY ?? undefined,
      });
      if (ticket === this.inflight) {
        this.state.result = result;
        this.state.error = null;
        this.onUpdate(this.state);
      }
    } catch (e) {
      if (ticket === this.inflight) {
        this.state.result = null;
        this.state.error = (e as Error).message;
        this.onUpdate(this.state);
      }
    }
  }

  /** Make the candidate constraint real; future recommendations use it. */
  async applyConstraint(): Promise<void> {
    if (this.state.candidateDelta === null && this.state.candidateYMin === null) {
      throw new Error("nothing to apply");
    }
    await this.api.updateConstraint({
      delta: this.state.candidateDelta ?? undefined,
      y_min: this.state.candidateYMin ?? undefined,
    });
  }
}
