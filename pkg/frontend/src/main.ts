import { GuardApi } from "./api.js";
import { actionForKey } from "./keyboard.js";
import {
  QueueState,
  beginDecision,
  decisionConflicted,
  decisionFailed,
  decisionGone,
  decisionSucceeded,
  focusedItem,
  initialState,
  moveCursor,
  refreshItems,
  takeDrafts,
} from "./state.js";
import type { DecideResult, DecisionAction, PendingDecision } from "./types.js";
import { renderError, renderNotice, renderQueue, renderStats } from "./view.js";

const QUEUE_LIMIT = 50;
const QUEUE_POLL_MS = 3000;
const STATS_POLL_MS = 5000;
const RETRY_MS = 4000;

const api = new GuardApi("");
let state: QueueState = initialState();
// Labels come from the service; the UI never invents label strings.
let labels: string[] = [];

const queueEl = document.getElementById("queue")!;
const statsEl = document.getElementById("stats")!;
const noticeEl = document.getElementById("notice")!;
const errorEl = document.getElementById("error")!;
const healthEl = document.getElementById("health")!;

function render(): void {
  renderQueue(queueEl, state, labels);
  renderNotice(noticeEl, state.notice);
}

function applyResult(decision: PendingDecision, result: DecideResult): void {
  switch (result.kind) {
    case "ok":
      state = decisionSucceeded(state, decision.id);
      break;
    case "conflict":
      state = decisionConflicted(state, decision.id);
      void refreshQueue();
      break;
    case "gone":
      state = decisionGone(state, decision.id);
      break;
    case "invalid":
      state = decisionGone(state, decision.id);
      state = { ...state, notice: `rejected by service: ${result.message}` };
      break;
    case "network":
      state = decisionFailed(state, decision, result.message);
      break;
  }
  render();
  void refreshStats();
}

async function submit(id: string, action: DecisionAction, label?: string): Promise<void> {
  const begun = beginDecision(state, id, action, label);
  if (!begun) return; // unknown item or already in flight
  state = begun.state;
  render();
  const result = await api.decide(begun.decision.id, begun.decision.action, begun.decision.label);
  applyResult(begun.decision, result);
}

async function retryDrafts(): Promise<void> {
  const taken = takeDrafts(state);
  if (taken.drafts.length === 0) return;
  state = taken.state;
  for (const draft of taken.drafts) {
    const result = await api.decide(draft.id, draft.action, draft.label);
    applyResult(draft, result);
  }
}

async function refreshQueue(): Promise<void> {
  try {
    const items = await api.queue(QUEUE_LIMIT);
    state = refreshItems(state, items);
    renderError(errorEl, null);
  } catch (err) {
    renderError(errorEl, `cannot reach guard service: ${err instanceof Error ? err.message : err}`);
  }
  render();
}

async function refreshStats(): Promise<void> {
  try {
    renderStats(statsEl, await api.stats());
  } catch {
    // the queue error banner already covers unreachability
  }
}

function onKeydown(event: KeyboardEvent): void {
  if (event.target instanceof HTMLInputElement || event.target instanceof HTMLTextAreaElement) {
    return;
  }
  const action = actionForKey(event.key, labels.length);
  if (!action) return;
  event.preventDefault();
  if (action.type === "next" || action.type === "prev") {
    state = moveCursor(state, action.type === "next" ? 1 : -1);
    render();
    return;
  }
  const item = focusedItem(state);
  if (!item) return;
  if (action.type === "accept") void submit(item.id, "accept");
  else if (action.type === "reject") void submit(item.id, "reject");
  else void submit(item.id, "relabel", labels[action.labelIndex]);
}

function onClick(event: Event): void {
  const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
  if (!target) return;
  const action = target.dataset.action;
  if (action === "retry-now") {
    void refreshQueue();
    void retryDrafts();
    return;
  }
  const id = target.dataset.id;
  if (!id) return;
  if (action === "accept") void submit(id, "accept");
  else if (action === "reject") void submit(id, "reject");
  else if (action === "relabel" && target.dataset.label) void submit(id, "relabel", target.dataset.label);
}

async function bootstrap(): Promise<void> {
  try {
    const [health, serverLabels] = await Promise.all([api.health(), api.labels()]);
    labels = serverLabels;
    healthEl.textContent = `model ${health.model_version}`;
    renderError(errorEl, null);
  } catch (err) {
    renderError(errorEl, `cannot reach guard service: ${err instanceof Error ? err.message : err}`);
    setTimeout(bootstrap, RETRY_MS);
    return;
  }
  await refreshQueue();
  await refreshStats();
  setInterval(() => void refreshQueue(), QUEUE_POLL_MS);
  setInterval(() => void refreshStats(), STATS_POLL_MS);
  setInterval(() => void retryDrafts(), RETRY_MS);
}

document.addEventListener("keydown", onKeydown);
document.addEventListener("click", onClick);
void bootstrap();
