/** Query-board state: cards, selections, and the submit lifecycle.
 *
 * The board owns no authoritative data; it mirrors GET /api/queries and is
 * fully reconstructed from the server on refresh. A card in "submitting"
 * state ignores further submit calls, so a double-click cannot fire two
 * commits even before the server's idempotency check.
 */

import { ApiClient, QueryEntry } from "./api.js";
import { freshKey } from "./idempotency.js";

export type CardStatus = "open" | "submitting" | "done" | "error";

export interface Card {
  entry: QueryEntry;
  selected: number[];
  multi: boolean;
  status: CardStatus;
  message: string | null;
  inflightKey: string | null;
}

export class Board {
  cards = new Map<string, Card>();

  constructor(private readonly api: ApiClient) {}

  /** Mirror the server's pending list; local selections survive a poll. */
  sync(entries: QueryEntry[]): void {
    const seen = new Set<string>();
    for (const entry of entries) {
      seen.add(entry.sample_id);
      if (!this.cards.has(entry.sample_id)) {
        this.cards.set(entry.sample_id, {
          entry,
          selected: [],
          multi: false,
          status: "open",
          message: null,
          inflightKey: null,
        });
      }
    }
    for (const id of [...this.cards.keys()]) {
      if (!seen.has(id)) this.cards.delete(id); // labeled elsewhere or drained
    }
  }

  toggleClass(sampleId: string, classIndex: number): void {
    const card = this.cards.get(sampleId);
    if (!card || card.status === "submitting") return;
    if (card.selected.includes(classIndex)) {
      card.selected = card.selected.filter((c) => c !== classIndex);
    } else if (card.multi) {
      card.selected = [...card.selected, classIndex].sort((a, b) => a - b);
    } else {
      card.selected = [classIndex];
    }
  }

  setMulti(sampleId: string, multi: boolean): void {
    const card = this.cards.get(sampleId);
    if (!card || card.status === "submitting") return;
    card.multi = multi;
    if (!multi && card.selected.length > 1) card.selected = card.selected.slice(0, 1);
  }

  /**
   * Submit one card. Returns the new status ("submitting" calls are
   * swallowed and report "submitting" immediately).
   */
  async submit(sampleId: string, annotatorId: string): Promise<CardStatus> {
    const card = this.cards.get(sampleId);
    if (!card) return "error";
    if (card.status === "submitting") return "submitting";
    if (card.selected.length === 0) {
      card.status = "error";
      card.message = "pick at least one class";
      return card.status;
    }
    if (!annotatorId) {
      card.status = "error";
      card.message = "enter an annotator id";
      return card.status;
    }
    card.status = "submitting";
    card.message = null;
    const key = card.inflightKey ?? freshKey(sampleId);
    card.inflightKey = key;
    const single = !card.multi && card.selected.length === 1;
    const result = await this.api.postLabel({
      sample_id: sampleId,
      annotator_id: annotatorId,
      ...(single ? { hard: card.selected[0] } : { votes: [card.selected] }),
      idempotency_key: key,
    });
    if (result.ok) {
      card.status = "done";
      this.cards.delete(sampleId);
    } else {
      // a rejected submission is finished: the next attempt is a new one
      card.status = "error";
      card.message = result.error;
      card.inflightKey = null;
    }
    return card.status;
  }

  openCards(): Card[] {
    return [...this.cards.values()];
  }
}
