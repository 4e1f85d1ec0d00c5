/**
 * Gain selection from the smallest-noticeable-change rule of thumb.
 *
 * If the smallest noticeable dose change is `doseStep` and it shifts
 * well-being by somewhere between `dyLo` and `dyHi` units, the per-unit
 * response lies in [dyLo/doseStep, dyHi/doseStep], so the safe gains are the
 * reciprocals of the range endpoints.
 */

export interface GainsPreview {
  kPlus: number;
  kMinus: number;
}

export function ruleOfThumbGains(doseStep: number, dyLo: number, dyHi: number): GainsPreview {
  if (!(doseStep > 0) || !(dyLo > 0) || !(dyHi > 0)) {
    throw new RangeError("all rule-of-thumb inputs must be positive");
  }
  if (dyLo > dyHi) {
    throw new RangeError("dy_lo must not exceed dy_hi");
  }
  return { kPlus: doseStep / dyHi, kMinus: doseStep / dyLo };
}

export function validateGains(kPlus: number, kMinus: number): string | null {
  if (!(kPlus > 0) || !(kMinus > 0)) return "gains must be positive";
  if (kMinus < kPlus) return "the below-setpoint gain must be at least the above-setpoint gain";
  return null;
}
