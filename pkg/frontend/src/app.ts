/** DOM wiring: login, 5-second polling, card grid, CDF panel.
 *
 * All decisions live in model.ts/actions.ts/cdf.ts; this file only renders
 * the current ViewState and forwards clicks.
 */

import { ApiClient, ApiError } from "./api.js";
import { ActionDispatcher } from "./actions.js";
import { renderCdfSvg, seriesFromReport, type CdfSeries } from "./cdf.js";
import { buildViewState, type CardAction, type SessionCard } from "./model.js";
import type { Identity, SessionView } from "./types.js";

const POLL_INTERVAL_MS = 5000;

interface AppState {
  api: ApiClient;
  identity: Identity;
  snapshot: SessionView[];
  dispatcher: ActionDispatcher;
  timer: number | null;
}

let state: AppState | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function login(): Promise<void> {
  const server = (el<HTMLInputElement>("server").value || window.location.origin).replace(/\/$/, "");
  const token = el<HTMLInputElement>("token").value.trim();
  const api = new ApiClient(server, token);
  try {
    const identity = await api.whoami();
    const dispatcher = new ActionDispatcher(api, render, (url) => window.open(url, "_blank"));
    state = { api, identity, snapshot: [], dispatcher, timer: null };
    el("login-error").textContent = "";
    el("login-view").hidden = true;
    el("main-view").hidden = false;
    el("who").textContent = `${identity.subject} (${identity.role}, ${identity.tenant})`;
    await refresh();
    state.timer = window.setInterval(refresh, POLL_INTERVAL_MS);
  } catch (err) {
    el("login-error").textContent =
      err instanceof ApiError && err.status === 401 ? "invalid token" : String(err);
  }
}

async function refresh(): Promise<void> {
  if (!state) return;
  try {
    state.snapshot = await state.api.listSessions();
  } catch (err) {
    if (err instanceof ApiError && err.status === 401) return logout();
  }
  render();
}

function logout(): void {
  if (state?.timer) window.clearInterval(state.timer);
  state = null;
  el("main-view").hidden = true;
  el("login-view").hidden = false;
}

function render(): void {
  if (!state) return;
  const view = buildViewState(
    state.identity,
    state.snapshot,
    state.dispatcher.inflight,
    state.dispatcher.conflicts,
  );
  const grid = el("cards");
  grid.replaceChildren();
  if (view.emptyState) {
    const empty = document.createElement("div");
    empty.className = "empty-state";
    empty.textContent = "no sessions yet";
    grid.appendChild(empty);
  }
  for (const card of view.cards) {
    grid.appendChild(renderCard(card));
  }
  el("reports-panel").hidden = !view.showReports;
}

function renderCard(card: SessionCard): HTMLElement {
  const box = document.createElement("div");
  box.className = `card state-${card.state.toLowerCase()}`;
  const title = document.createElement("h3");
  title.textContent = `#${card.id} · ${card.owner}`;
  const badge = document.createElement("span");
  badge.className = "badge";
  badge.textContent = card.pending ? `${card.state}…` : card.state;
  const updated = document.createElement("small");
  updated.textContent = `updated ${card.lastUpdated}`;
  box.append(title, badge, updated);
  if (card.conflict) {
    const conflict = document.createElement("p");
    conflict.className = "conflict";
    conflict.textContent = card.conflict;
    box.appendChild(conflict);
  }
  const row = document.createElement("div");
  row.className = "actions";
  for (const action of card.actions) {
    const button = document.createElement("button");
    button.textContent = action;
    button.addEventListener("click", () => void state?.dispatcher.dispatch(card, action as CardAction));
    row.appendChild(button);
  }
  box.appendChild(row);
  return box;
}

async function loadReports(): Promise<void> {
  if (!state) return;
  const ids = el<HTMLInputElement>("report-ids").value
    .split(",")
    .map((s) => s.trim())
    .filter(Boolean);
  const seriesList: CdfSeries[] = [];
  for (const id of ids) {
    try {
      seriesList.push(seriesFromReport(id, await state.api.getReport(id)));
    } catch (err) {
      el("report-error").textContent = `${id}: ${String(err)}`;
      return;
    }
  }
  el("report-error").textContent = "";
  const mount = el("cdf-mount");
  mount.innerHTML = renderCdfSvg(seriesList);
  attachHover(mount, seriesList);
}

function attachHover(mount: HTMLElement, seriesList: CdfSeries[]): void {
  const svg = mount.querySelector("svg");
  if (!svg) return;
  const readout = el("cdf-readout");
  svg.addEventListener("mousemove", (event) => {
    const rect = svg.getBoundingClientRect();
    const frac = (event.clientX - rect.left) / rect.width;
    const tMax = Math.max(...seriesList.flatMap((s) => s.points.map(([t]) => t)), 1);
    const t = Math.max(0, frac * tMax * 1.12 - 0.06 * tMax); // undo padding
    readout.textContent = seriesList
      .map((s) => {
        const hit = s.points.filter(([pt]) => pt <= t).at(-1);
        return hit ? `${s.label}: (${hit[0].toFixed(1)} ms, ${(hit[1] * 100).toFixed(0)}%)` : `${s.label}: —`;
      })
      .join("   ");
  });
}

export function boot(): void {
  el("login-button").addEventListener("click", () => void login());
  el("create-button").addEventListener("click", async () => {
    const error = await state?.dispatcher.create();
    el("create-error").textContent = error ?? "";
    await refresh();
  });
  el("load-reports").addEventListener("click", () => void loadReports());
  el("logout-button").addEventListener("click", logout);
}

if (typeof document !== "undefined" && document.getElementById("login-view")) {
  boot();
}
