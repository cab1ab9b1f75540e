// Browser entry point: owns the singleton state and wires DOM events to the
// pure modules. Everything interesting lives in state.ts / api.ts / bars.ts.

import { ExnetClient, ServiceRequestError, SubmitController } from "./api.js";
import { renderBars, renderHistory, renderLabels } from "./bars.js";
import {
  addLabel,
  canSubmit,
  editSupport,
  newSession,
  removeLabel,
  setQuery,
  type SessionState,
} from "./state.js";
import { exportSession, importSession } from "./session_io.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

let state: SessionState = newSession();
let client = new ExnetClient();
const controller = new SubmitController();

const labelsBox = byId<HTMLDivElement>("labels");
const barsBox = byId<HTMLDivElement>("bars");
const historyBox = byId<HTMLDivElement>("history");
const statusLine = byId<HTMLParagraphElement>("status");
const staleBadge = byId<HTMLSpanElement>("stale");
const queryInput = byId<HTMLInputElement>("query");
const submitBtn = byId<HTMLButtonElement>("submit");
const baseUrlInput = byId<HTMLInputElement>("base-url");

function note(msg: string, isError = false): void {
  statusLine.textContent = msg;
  statusLine.className = isError ? "error" : "";
}

function render(): void {
  labelsBox.innerHTML = renderLabels(state);
  barsBox.innerHTML = state.lastScores ? renderBars(state.lastScores, state.top) : renderBars({}, null);
  historyBox.innerHTML = renderHistory(state.history);
  staleBadge.hidden = !state.stale;
  submitBtn.disabled = !canSubmit(state) || controller.busy;
  if (queryInput.value !== state.query) queryInput.value = state.query;
}

function update(next: SessionState, warning?: string): void {
  state = next;
  if (warning) note(warning, false);
  render();
}

async function refreshHealth(): Promise<void> {
  try {
    const h = await client.health();
    note(
      h.status === "ready"
        ? `service ready (${h.config_preset ?? "?"} preset, model ${String(h.model_id).slice(0, 12)})`
        : `service ${h.status}`,
    );
  } catch {
    note(`cannot reach service at ${client.baseUrl}`, true);
  }
}

async function submit(): Promise<void> {
  if (!canSubmit(state) || controller.busy) return;
  submitBtn.disabled = true;
  note("classifying");
  try {
    const outcome = await controller.submit(state, client);
    if (!outcome.discarded) {
      update(outcome.state);
      note("done");
    }
  } catch (err) {
    if (err instanceof ServiceRequestError) {
      note(`${err.field}: ${err.message}`, true);
    } else {
      note(String(err), true);
    }
  } finally {
    render();
  }
}

byId<HTMLFormElement>("add-label").addEventListener("submit", (ev) => {
  ev.preventDefault();
  const input = byId<HTMLInputElement>("new-label");
  try {
    update(addLabel(state, input.value.trim()));
    input.value = "";
  } catch (err) {
    note(String(err instanceof Error ? err.message : err), true);
  }
});

labelsBox.addEventListener("click", (ev) => {
  const target = ev.target as HTMLElement;
  const label = target.dataset["label"];
  if (!label) return;
  try {
    if (target.classList.contains("remove-label")) {
      update(removeLabel(state, label));
    } else if (target.classList.contains("remove-support")) {
      const idx = Number(target.dataset["index"]);
      const entry = state.labels.find((l) => l.name === label);
      const text = entry?.supports[idx];
      if (text !== undefined) {
        update(editSupport(state, label, "remove", text).state);
      }
    } else if (target.classList.contains("edit-support")) {
      const idx = Number(target.dataset["index"]);
      const entry = state.labels.find((l) => l.name === label);
      const current = entry?.supports[idx];
      if (current === undefined) return;
      const text = window.prompt("edit support", current);
      if (text !== null) {
        const res = editSupport(state, label, "edit", { index: idx, text });
        update(res.state, res.warning);
      }
    }
  } catch (err) {
    note(String(err instanceof Error ? err.message : err), true);
  }
});

labelsBox.addEventListener("submit", (ev) => {
  const form = ev.target as HTMLFormElement;
  if (!form.classList.contains("add-support")) return;
  ev.preventDefault();
  const label = form.dataset["label"];
  const input = form.querySelector("input");
  if (!label || !input || input.value.trim() === "") return;
  try {
    const res = editSupport(state, label, "add", input.value);
    update(res.state, res.warning);
    input.value = "";
  } catch (err) {
    note(String(err instanceof Error ? err.message : err), true);
  }
});

queryInput.addEventListener("input", () => {
  state = setQuery(state, queryInput.value);
  submitBtn.disabled = !canSubmit(state) || controller.busy;
});

submitBtn.addEventListener("click", () => void submit());

byId<HTMLButtonElement>("export").addEventListener("click", () => {
  const blob = new Blob([exportSession(state)], { type: "application/json" });
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = "exnet-session.json";
  a.click();
  URL.revokeObjectURL(url);
});

byId<HTMLInputElement>("import").addEventListener("change", async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  try {
    update(importSession(await file.text()));
    note("session imported");
  } catch (err) {
    note(String(err instanceof Error ? err.message : err), true);
  }
  (ev.target as HTMLInputElement).value = "";
});

baseUrlInput.addEventListener("change", () => {
  client = new ExnetClient(baseUrlInput.value);
  void refreshHealth();
});

baseUrlInput.value = client.baseUrl;
render();
void refreshHealth();
