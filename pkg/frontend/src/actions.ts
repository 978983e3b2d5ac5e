/** Card action dispatch: API call plus optimistic state.
 *
 * Per-card in-flight guards prevent duplicate actions; a 409 reverts the
 * optimistic state (the card falls back to the last snapshot) and records the
 * conflict for inline display. "open" never calls the API: it launches the
 * session URL in a new browsing context.
 */

import { ApiClient, ApiError } from "./api.js";
import type { CardAction, InFlight, SessionCard } from "./model.js";

export class ActionDispatcher {
  readonly inflight = new Map<number, InFlight>();
  readonly conflicts = new Map<number, string>();

  constructor(
    private api: ApiClient,
    private onChange: () => void,
    private openWindow: (url: string) => void,
  ) {}

  async dispatch(card: SessionCard, action: CardAction): Promise<void> {
    if (!card.actions.includes(action)) return; // disabled/unauthorized: no call
    if (action === "open") {
      if (card.openUrl) this.openWindow(card.openUrl);
      return;
    }
    if (this.inflight.has(card.id)) return;
    this.inflight.set(card.id, { action });
    this.conflicts.delete(card.id);
    this.onChange();
    try {
      if (action === "suspend") await this.api.suspend(card.id);
      else if (action === "resume") await this.api.resume(card.id);
      else await this.api.destroy(card.id);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.conflicts.set(card.id, `conflict: ${err.message}`);
      } else {
        this.conflicts.set(card.id, err instanceof Error ? err.message : String(err));
      }
    } finally {
      this.inflight.delete(card.id);
      this.onChange();
    }
  }

  async create(): Promise<string | null> {
    try {
      await this.api.createSession();
      return null;
    } catch (err) {
      return err instanceof Error ? err.message : String(err);
    } finally {
      this.onChange();
    }
  }
}
