/**
 * Chart models derived verbatim from the server's session view.
 * Rendering maps data to SVG polylines; no client-side recomputation.
 */

import type { SessionView } from "./types.js";

export interface SeriesPoint {
  step: number;
  value: number;
}

export interface ChartModel {
  wellbeing: SeriesPoint[];
  doses: SeriesPoint[];
  constraint: SeriesPoint[];
  changeMarkers: number[];
  margin: SeriesPoint[];
  onTrack: boolean | null;
}

export function buildChartModel(view: SessionView): ChartModel {
  const wellbeing = view.measurements.map((m) => ({ step: m.step, value: m.y }));
  const doses = view.recommendations.map((r) => ({ step: r.step, value: r.dose }));

  // piecewise-constant constraint path across the committed steps
  const constraint: SeriesPoint[] = [];
  let yMin = view.config.y_min;
  const changes = [...view.constraint_changes].sort(
    (a, b) => a.effective_step - b.effective_step,
  );
  let idx = 0;
  for (let step = 0; step < view.measurements.length; step++) {
    while (idx < changes.length && changes[idx]!.effective_step <= step) {
      yMin = changes[idx]!.y_min;
      idx += 1;
    }
    constraint.push({ step, value: yMin });
  }

  const margin = view.long_term_margin.map((value, i) => ({ step: i + 1, value }));
  const last = margin.length > 0 ? margin[margin.length - 1]!.value : null;
  return {
    wellbeing,
    doses,
    constraint,
    changeMarkers: changes.map((c) => c.effective_step),
    margin,
    onTrack: last === null ? null : last >= 0,
  };
}

export interface ViewBox {
  width: number;
  height: number;
  pad: number;
}

export function polylinePoints(series: SeriesPoint[], box: ViewBox): string {
  if (series.length === 0) return "";
  const xs = series.map((p) => p.step);
  const ys = series.map((p) => p.value);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs, xMin + 1);
  const yMin = Math.min(...ys);
  const yMax = Math.max(...ys, yMin + 1e-9);
  const w = box.width - 2 * box.pad;
  const h = box.height - 2 * box.pad;
  return series
    .map((p) => {
      const x = box.pad + ((p.step - xMin) / (xMax - xMin)) * w;
      const y = box.pad + (1 - (p.value - yMin) / (yMax - yMin)) * h;
      return `${x.toFixed(2)},${y.toFixed(2)}`;
    })
    .join(" ");
}
