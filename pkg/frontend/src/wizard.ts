/**
 * Setup wizard: turn perceptible-change inputs into a gains preview, then
 * create the session on explicit confirmation (exactly one create call).
 */

import type { SessionApi } from "./api.js";
import type { CreatedSession } from "./types.js";
import { ruleOfThumbGains, type GainsPreview } from "./gains.js";

export interface WizardInputs {
  doseStep: number;
  dyLo: number;
  dyHi: number;
  yMin: number;
  uInit: number;
  doseCap?: number | null;
}

export type WizardState =
  | { phase: "editing"; error: string | null; preview: GainsPreview | null }
  | { phase: "submitting" }
  | { phase: "created"; session: CreatedSession };

export class SetupWizard {
  private state: WizardState = { phase: "editing", error: null, preview: null };
  private inputs: WizardInputs | null = null;

  constructor(private readonly api: SessionApi) {}

  get current(): WizardState {
    return this.state;
  }

  /** Validate inputs and compute the gains preview; invalid input blocks. */
  review(inputs: WizardInputs): WizardState {
    try {
      const preview = ruleOfThumbGains(inputs.doseStep, inputs.dyLo, inputs.dyHi);
      if (!Number.isFinite(inputs.yMin)) throw new RangeError("threshold must be a number");
      if (!(inputs.uInit >= 0)) throw new RangeError("current dose must be >= 0");
      this.inputs = inputs;
      this.state = { phase: "editing", error: null, preview };
    } catch (e) {
      this.inputs = null;
      this.state = { phase: "editing", error: (e as Error).message, preview: null };
    }
    return this.state;
  }

  /** Create the session from the last valid preview. */
  async confirm(): Promise<WizardState> {
    if (this.state.phase !== "editing" || !this.state.preview || !this.inputs) {
      throw new Error("nothing to confirm: review valid inputs first");
    }
    const inputs = this.inputs;
    this.state = { phase: "submitting" };
    const session = await this.api.createSession({
      rule_of_thumb: { dose_step: inputs.doseStep, dy_lo: inputs.dyLo, dy_hi: inputs.dyHi },
      y_min: inputs.yMin,
      u_init: inputs.uInit,
      dose_cap: inputs.doseCap ?? null,
    });
    this.state = { phase: "created", session };
    return this.state;
  }
}
