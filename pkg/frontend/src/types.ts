/**
 * Payload types of the session-service JSON API.
 * The client renders these verbatim; it never recomputes committed doses.
 */

export interface SessionConfig {
  k_plus: number;
  k_minus: number;
  y_min: number;
  delta: number;
  u_init: number;
  dose_cap: number | null;
  expected_interval_seconds: number | null;
}

export interface CreateSessionRequest {
  rule_of_thumb?: { dose_step: number; dy_lo: number; dy_hi: number };
  g0_range?: { lo: number; hi: number };
  k_plus?: number;
  k_minus?: number;
  y_min: number;
  delta?: number;
  u_init?: number;
  dose_cap?: number | null;
}

export interface CreatedSession {
  id: string;
  secret: string;
  config: SessionConfig;
}

export interface MeasurementResponse {
  step: number;
  dose: number;
  capped: boolean;
  increase: boolean;
  gap_flagged: boolean;
  completion_eligible: boolean;
  idempotent_replay?: boolean;
}

export interface WhatIfQuery {
  y?: number;
  delta?: number;
  y_min?: number;
}

export interface WhatIfResponse {
  dose: number;
  capped: boolean;
  y: number;
  y_min: number;
  delta: number;
  hypothetical: true;
}

export interface ConstraintUpdate {
  y_min?: number;
  delta?: number;
}

export interface Measurement {
  step: number;
  y: number;
  timestamp: number;
  gap_flagged: boolean;
}

export interface Recommendation {
  step: number;
  dose: number;
}

export interface ConstraintChange {
  effective_step: number;
  y_min: number;
  delta: number;
  timestamp: number;
}

export interface SessionView {
  id: string;
  status: "active" | "completed" | "aborted";
  config: SessionConfig;
  y_min: number;
  delta: number;
  u_prev: number;
  measurements: Measurement[];
  recommendations: Recommendation[];
  constraint_changes: ConstraintChange[];
  long_term_margin: number[];
}

export interface ProblemDocument {
  type: string;
  title: string;
  status: number;
  code: string;
  detail: string;
}
