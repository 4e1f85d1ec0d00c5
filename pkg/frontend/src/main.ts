/** DOM wiring: wizard -> daily entry + charts + what-if panel. */

import { SessionApi } from "./api.js";
import { buildChartModel, polylinePoints, type ChartModel } from "./charts.js";
import { DailyEntryController } from "./entry.js";
import { SetupWizard } from "./wizard.js";
import { WhatIfPanel } from "./whatif.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const num = (id: string): number => parseFloat(($(id) as HTMLInputElement).value);

const api = new SessionApi(localStorage.getItem("taperkit.baseUrl") ?? "");
const wizard = new SetupWizard(api);

function fmt(x: number): string {
  return x.toFixed(3).replace(/\.?0+$/, "");
}

function renderCharts(model: ChartModel): void {
  const box = { width: 640, height: 180, pad: 12 };
  $("chart-wellbeing").innerHTML = `
    <svg viewBox="0 0 ${box.width} ${box.height}">
      <polyline class="line constraint" points="${polylinePoints(model.constraint, box)}" />
      <polyline class="line wellbeing" points="${polylinePoints(model.wellbeing, box)}" />
    </svg>`;
  $("chart-doses").innerHTML = `
    <svg viewBox="0 0 ${box.width} ${box.height}">
      <polyline class="line dose" points="${polylinePoints(model.doses, box)}" />
    </svg>`;
  const badge = $("on-track");
  badge.textContent =
    model.onTrack === null ? "–" : model.onTrack ? "on track" : "behind the long-term bound";
  badge.className = model.onTrack === false ? "badge bad" : "badge ok";
  $("change-markers").textContent = model.changeMarkers.length
    ? `constraint changes at steps ${model.changeMarkers.join(", ")}`
    : "";
}

async function refreshView(): Promise<void> {
  const view = await api.getSession();
  renderCharts(buildChartModel(view));
  $("session-status").textContent = `session ${view.id} — ${view.status}`;
}

const entry = new DailyEntryController(api, (result) => {
  $("dose-display").textContent = fmt(result.dose);
  $("dose-flags").textContent = [
    result.capped ? "capped at the configured maximum" : "",
    result.increase ? "increase over the previous dose" : "",
    result.gap_flagged ? "gap since the last entry recorded" : "",
  ].filter(Boolean).join(" · ");
  $("completion-banner").hidden = !result.completion_eligible;
  void refreshView();
});

const panel = new WhatIfPanel(api, (state) => {
  $("whatif-dose").textContent = state.result ? fmt(state.result.dose) : "–";
  $("whatif-error").textContent = state.error ?? "";
});

function showApp(): void {
  $("wizard").hidden = true;
  $("app").hidden = false;
}

$("wizard-review").addEventListener("click", () => {
  const state = wizard.review({
    doseStep: num("in-dose-step"),
    dyLo: num("in-dy-lo"),
    dyHi: num("in-dy-hi"),
    yMin: num("in-y-min"),
    uInit: num("in-u-init"),
  });
  if (state.phase === "editing" && state.error) {
    $("wizard-error").textContent = state.error;
    $("wizard-preview").hidden = true;
  } else if (state.phase === "editing" && state.preview) {
    $("wizard-error").textContent = "";
    $("wizard-preview").hidden = false;
    $("preview-gains").textContent =
      `decrease gain ${fmt(state.preview.kPlus)}, increase gain ${fmt(state.preview.kMinus)}`;
  }
});

$("wizard-confirm").addEventListener("click", () => {
  void wizard.confirm().then((state) => {
    if (state.phase === "created") {
      $("session-status").textContent = `session ${state.session.id} — active`;
      showApp();
    }
  });
});

$("entry-submit").addEventListener("click", () => {
  const y = num("in-y");
  $("entry-error").textContent = "";
  void entry.submit(Number.isFinite(y) ? y : undefined).catch((e) => {
    $("entry-error").textContent =
      `${(e as Error).message} — your entry is kept; press submit again to retry safely`;
  });
});

for (const [id, setter] of [
  ["whatif-delta", (v: number | null) => panel.setDelta(v)],
  ["whatif-ymin", (v: number | null) => panel.setYMin(v)],
  ["whatif-y", (v: number | null) => panel.setHypotheticalY(v)],
] as const) {
  $(id).addEventListener("input", () => {
    const v = parseFloat(($(id) as HTMLInputElement).value);
    setter(Number.isFinite(v) ? v : null);
  });
}

$("whatif-apply").addEventListener("click", () => {
  void panel.applyConstraint().then(refreshView);
});

$("complete-confirm").addEventListener("click", () => {
  void api.confirmCompletion().then(refreshView);
});
