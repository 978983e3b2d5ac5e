/** View-model construction.
 *
 * buildViewState is a pure function of (identity, latest API snapshot,
 * in-flight optimistic actions, per-card conflicts): same inputs, same cards.
 * It also encodes the authorization rules, so the rendered buttons never
 * offer an action the API would forbid for the logged-in role.
 */

import type { Identity, SessionView } from "./types.js";

export type CardAction = "suspend" | "resume" | "destroy" | "open";

export interface SessionCard {
  id: number;
  owner: string;
  state: string;
  pending: boolean;
  openUrl: string | null;
  actions: CardAction[];
  conflict: string | null;
  lastUpdated: string;
}

export interface InFlight {
  action: Exclude<CardAction, "open">;
}

export interface ViewState {
  cards: SessionCard[];
  emptyState: boolean;
  canCreate: boolean;
  showReports: boolean;
}

const OPTIMISTIC_TARGET: Record<InFlight["action"], string> = {
  suspend: "Suspended",
  resume: "Running",
  destroy: "Destroyed",
};

const OPEN_STATES = new Set(["Running", "Suspended"]);
const DESTROYABLE = new Set(["Running", "Suspended", "Stopped", "Failed"]);

/** Owner labels are masked for non-instructor viewers (own cards excepted). */
export function maskOwner(owner: string, viewer: Identity): string {
  if (viewer.role === "instructor" || viewer.role === "admin") return owner;
  if (owner === viewer.subject) return owner;
  return owner.slice(0, 2) + "***";
}

/** Actions legal for the card's state (buttons for others stay hidden). */
export function legalActions(state: string): CardAction[] {
  const actions: CardAction[] = [];
  if (state === "Running") actions.push("suspend");
  if (state === "Suspended") actions.push("resume");
  if (OPEN_STATES.has(state)) actions.push("open");
  if (DESTROYABLE.has(state)) actions.push("destroy");
  return actions;
}

/** Role/ownership filter on top of state legality. */
export function authorizedActions(session: SessionView, viewer: Identity): CardAction[] {
  const legal = legalActions(session.state);
  if (viewer.role === "admin" || viewer.role === "instructor") return legal;
  if (session.owner !== viewer.subject) {
    // a student may look (if the server even listed it) but touch nothing
    return legal.filter((a) => a === "open");
  }
  return legal;
}

export function buildViewState(
  viewer: Identity,
  snapshot: SessionView[],
  inflight: Map<number, InFlight>,
  conflicts: Map<number, string>,
): ViewState {
  const cards = snapshot
    .filter((s) => s.state !== "Destroyed")
    .map((s) => {
      const flight = inflight.get(s.id);
      const state = flight ? OPTIMISTIC_TARGET[flight.action] : s.state;
      return {
        id: s.id,
        owner: maskOwner(s.owner, viewer),
        state,
        pending: flight !== undefined,
        openUrl: OPEN_STATES.has(state) && s.url ? s.url : null,
        actions: flight ? [] : authorizedActions(s, viewer),
        conflict: conflicts.get(s.id) ?? null,
        lastUpdated: s.updated_at,
      };
    })
    .sort((a, b) => a.id - b.id);
  return {
    cards,
    emptyState: cards.length === 0,
    canCreate: true, // the per-user cap is the server's call; 429 surfaces inline
    showReports: viewer.role === "instructor" || viewer.role === "admin",
  };
}
