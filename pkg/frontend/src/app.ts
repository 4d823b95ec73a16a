/** Browser entry point: renders the query board and progress panel,
 * polling both endpoints every 2 seconds. All state is rebuilt from the
 * server; refreshing the page loses nothing but unsubmitted selections.
 */

import { ApiClient } from "./api.js";
import { Board } from "./board.js";
import { ProgressTracker } from "./progress.js";

const POLL_MS = 2000;

const api = new ApiClient("");
const board = new Board(api);
const progress = new ProgressTracker(api);

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function annotatorId(): string {
  const input = document.getElementById("annotator-id") as HTMLInputElement | null;
  return input?.value.trim() ?? "";
}

function renderBoard(): void {
  const root = document.getElementById("board");
  if (!root) return;
  root.textContent = "";
  const cards = board.openCards();
  if (cards.length === 0) {
    root.appendChild(el("p", "idle", "No samples waiting for labels."));
    return;
  }
  for (const card of cards) {
    const box = el("div", "card");
    box.dataset.sampleId = card.entry.sample_id;
    box.appendChild(el("h3", undefined, card.entry.sample_id));
    const summary = card.entry.feature_summary;
    box.appendChild(
      el(
        "p",
        "summary",
        `round ${card.entry.iteration} · ${summary.dims} dims · ` +
          `min ${summary.min} · mean ${summary.mean} · max ${summary.max}`,
      ),
    );
    if (card.entry.audio_ref) {
      const link = el("a", "audio", "listen");
      link.href = card.entry.audio_ref;
      link.target = "_blank";
      box.appendChild(link);
    }

    const classes = el("div", "classes");
    card.entry.class_names.forEach((name, index) => {
      const button = el("button", "class-button", name);
      if (card.selected.includes(index)) button.classList.add("selected");
      button.disabled = card.status === "submitting";
      button.addEventListener("click", () => {
        board.toggleClass(card.entry.sample_id, index);
        renderBoard();
      });
      classes.appendChild(button);
    });
    box.appendChild(classes);

    const controls = el("div", "controls");
    const multiLabel = el("label", "multi-toggle", " allow several labels");
    const multi = el("input");
    multi.type = "checkbox";
    multi.checked = card.multi;
    multi.addEventListener("change", () => {
      board.setMulti(card.entry.sample_id, multi.checked);
      renderBoard();
    });
    multiLabel.prepend(multi);
    controls.appendChild(multiLabel);

    const submit = el("button", "submit", card.status === "submitting" ? "sending…" : "submit");
    submit.disabled = card.status === "submitting";
    submit.addEventListener("click", async () => {
      await board.submit(card.entry.sample_id, annotatorId());
      renderBoard();
    });
    controls.appendChild(submit);
    box.appendChild(controls);

    if (card.status === "error" && card.message) {
      box.appendChild(el("p", "error", card.message));
    }
    root.appendChild(box);
  }
}

function renderProgress(): void {
  const view = progress.view;
  const panel = document.getElementById("progress");
  if (!panel) return;
  const data = view.data;
  panel.textContent = "";
  if (!data) {
    panel.appendChild(el("p", "idle", view.stale ? "server unreachable" : "loading…"));
    return;
  }
  const bar = el("div", "bar");
  const fill = el("div", "bar-fill");
  fill.style.width = `${Math.round(progress.fractionLabeled() * 100)}%`;
  bar.appendChild(fill);
  panel.appendChild(bar);
  panel.appendChild(
    el(
      "p",
      "counts",
      `round ${data.iteration} · labeled ${data.labeled} / budget ${data.budget} · ` +
        `pending ${data.pending}`,
    ),
  );
  if (data.ua !== null && data.wa !== null) {
    panel.appendChild(el("p", "metrics", `UA ${data.ua.toFixed(4)} · WA ${data.wa.toFixed(4)}`));
  }
  if (data.terminal) {
    panel.appendChild(el("p", "banner", "Run complete — thank you!"));
  }
  if (view.stale) {
    panel.appendChild(el("p", "stale", `stale (last error: ${view.lastError})`));
  }
}

async function tick(): Promise<void> {
  await progress.poll();
  try {
    board.sync(await api.getQueries());
  } catch {
    // keep the current cards; the stale flag on the panel covers messaging
  }
  renderBoard();
  renderProgress();
}

void tick();
setInterval(() => void tick(), POLL_MS);
