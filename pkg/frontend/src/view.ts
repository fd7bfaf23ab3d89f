import type { QueueStats, ReviewItem } from "./types.js";
import type { QueueState } from "./state.js";

function escapeHtml(text: string): string {
  const div = document.createElement("div");
  div.textContent = text;
  return div.innerHTML;
}

function confidenceBar(confidence: number): string {
  const pct = Math.round(confidence * 100);
  return `
    <div class="confbar" title="confidence ${confidence.toFixed(3)}">
      <div class="confbar-fill" style="width: ${pct}%"></div>
      <span class="confbar-text">${pct}%</span>
    </div>`;
}

function itemCard(item: ReviewItem, focused: boolean, labels: string[]): string {
  const labelButtons = labels
    .map(
      (label, i) =>
        `<button class="label-btn" data-action="relabel" data-id="${escapeHtml(item.id)}"
                 data-label="${escapeHtml(label)}" title="${i + 1}">
           <kbd>${i + 1}</kbd> ${escapeHtml(label.replace(/_/g, " "))}
         </button>`,
    )
    .join("");
  return `
    <article class="card ${focused ? "focused" : ""}" data-item-id="${escapeHtml(item.id)}">
      <header>
        <span class="proposed">${escapeHtml(item.proposed.replace(/_/g, " "))}</span>
        <span class="round">round ${item.round}</span>
      </header>
      <p class="text">${escapeHtml(item.text)}</p>
      ${confidenceBar(item.confidence)}
      <footer>
        <button class="accept-btn" data-action="accept" data-id="${escapeHtml(item.id)}">
          <kbd>space</kbd> accept
        </button>
        <button class="reject-btn" data-action="reject" data-id="${escapeHtml(item.id)}">
          <kbd>x</kbd> reject
        </button>
        <details class="relabel">
          <summary>relabel</summary>
          <div class="label-grid">${labelButtons}</div>
        </details>
      </footer>
    </article>`;
}

export function renderQueue(container: HTMLElement, state: QueueState, labels: string[]): void {
  if (state.items.length === 0) {
    container.innerHTML = `<div class="empty">no pending items</div>`;
    return;
  }
  container.innerHTML = state.items
    .map((item, i) => itemCard(item, i === state.cursor, labels))
    .join("");
}

export function renderNotice(banner: HTMLElement, notice: string | null): void {
  if (!notice) {
    banner.hidden = true;
    banner.textContent = "";
    return;
  }
  banner.hidden = false;
  banner.textContent = notice;
}

export function renderError(banner: HTMLElement, message: string | null): void {
  if (!message) {
    banner.hidden = true;
    banner.innerHTML = "";
    return;
  }
  banner.hidden = false;
  banner.innerHTML = `${escapeHtml(message)} <button data-action="retry-now">retry</button>`;
}

export function renderStats(container: HTMLElement, stats: QueueStats): void {
  const states = ["pending", "accepted", "rejected", "relabeled"];
  const totals = states
    .map(
      (state) =>
        `<div class="stat"><span class="stat-num">${stats.by_state[state] ?? 0}</span>
         <span class="stat-name">${state}</span></div>`,
    )
    .join("");

  const rounds = Object.keys(stats.by_round)
    .sort((a, b) => Number(b) - Number(a))
    .map((round) => {
      const bucket = stats.by_round[round] ?? {};
      const cells = states.map((state) => `<td>${bucket[state] ?? 0}</td>`).join("");
      return `<tr><th>round ${round}</th>${cells}</tr>`;
    })
    .join("");

  const decided = Object.entries(stats.by_label).sort((a, b) => b[1] - a[1]);
  const maxCount = decided.length > 0 ? decided[0]![1] : 0;
  const histogram = decided
    .map(([label, count]) => {
      const width = maxCount > 0 ? Math.max(4, Math.round((count / maxCount) * 100)) : 0;
      return `<div class="hist-row">
        <span class="hist-label">${escapeHtml(label.replace(/_/g, " "))}</span>
        <div class="hist-bar" style="width: ${width}%"></div>
        <span class="hist-count">${count}</span>
      </div>`;
    })
    .join("");

  container.innerHTML = `
    <div class="stat-grid">${totals}</div>
    <table class="rounds">
      <thead><tr><th></th><th>pending</th><th>accepted</th><th>rejected</th><th>relabeled</th></tr></thead>
      <tbody>${rounds}</tbody>
    </table>
    <div class="histogram">
      <h3>decisions per label</h3>
      ${histogram || '<div class="empty">no decisions yet</div>'}
    </div>`;
}
