import type { DecisionAction, PendingDecision, ReviewItem } from "./types.js";

/**
 * Review queue state machine, kept free of DOM and network concerns so the
 * decision lifecycle is unit-testable: optimistic removal on submit, 409 and
 * 404 treated as authoritative, network failures retained as retryable
 * drafts. The UI layer renders from this and nothing else.
 */

export interface QueueState {
  items: ReviewItem[];
  /** ids with a POST in flight; blocks double submission. */
  inFlight: Set<string>;
  /** failed decisions kept for retry. */
  drafts: PendingDecision[];
  /** index of the keyboard-focused card. */
  cursor: number;
  notice: string | null;
}

export function initialState(): QueueState {
  return { items: [], inFlight: new Set(), drafts: [], cursor: 0, notice: null };
}

/** Newest round first, then confidence descending, then id. */
export function sortItems(items: ReviewItem[]): ReviewItem[] {
  return [...items].sort(
    (a, b) => b.round - a.round || b.confidence - a.confidence || a.id.localeCompare(b.id),
  );
}

/** Replace items with the server's view, dropping anything mid-flight. */
export function refreshItems(state: QueueState, fresh: ReviewItem[]): QueueState {
  const items = sortItems(fresh.filter((item) => !state.inFlight.has(item.id)));
  const cursor = Math.min(state.cursor, Math.max(0, items.length - 1));
  return { ...state, items, cursor };
}

export function focusedItem(state: QueueState): ReviewItem | null {
  return state.items[state.cursor] ?? null;
}

export function moveCursor(state: QueueState, delta: number): QueueState {
  if (state.items.length === 0) return state;
  const cursor = Math.min(Math.max(state.cursor + delta, 0), state.items.length - 1);
  return { ...state, cursor };
}

/**
 * Begin a decision: null when the item is unknown or already in flight
 * (the double-click/double-keypress guard). Otherwise the item leaves the
 * visible list immediately (optimistic) and the POST is recorded in flight.
 */
export function beginDecision(
  state: QueueState,
  id: string,
  action: DecisionAction,
  label?: string,
): { state: QueueState; decision: PendingDecision } | null {
  if (state.inFlight.has(id)) return null;
  const item = state.items.find((candidate) => candidate.id === id);
  if (!item) return null;
  if (action === "relabel" && !label) return null;
  const items = state.items.filter((candidate) => candidate.id !== id);
  const inFlight = new Set(state.inFlight);
  inFlight.add(id);
  const cursor = Math.min(state.cursor, Math.max(0, items.length - 1));
  const decision: PendingDecision = label ? { id, action, label } : { id, action };
  return { state: { ...state, items, inFlight, cursor }, decision };
}

function clearInFlight(state: QueueState, id: string): QueueState {
  const inFlight = new Set(state.inFlight);
  inFlight.delete(id);
  return { ...state, inFlight };
}

export function decisionSucceeded(state: QueueState, id: string): QueueState {
  return { ...clearInFlight(state, id), notice: null };
}

/** 409: someone else decided first; their decision wins. */
export function decisionConflicted(state: QueueState, id: string): QueueState {
  return {
    ...clearInFlight(state, id),
    notice: `item ${id} was already decided elsewhere`,
  };
}

/** 404: the item is gone from the queue; drop it with a notice. */
export function decisionGone(state: QueueState, id: string): QueueState {
  return { ...clearInFlight(state, id), notice: `item ${id} no longer exists` };
}

/** Network failure: keep the decision as a draft for retry. */
export function decisionFailed(
  state: QueueState,
  decision: PendingDecision,
  message: string,
): QueueState {
  const cleared = clearInFlight(state, decision.id);
  const drafts = cleared.drafts.filter((draft) => draft.id !== decision.id);
  drafts.push(decision);
  return { ...cleared, drafts, notice: `offline: ${message} (will retry)` };
}

/** Pop all drafts for a retry pass. */
export function takeDrafts(state: QueueState): { state: QueueState; drafts: PendingDecision[] } {
  return { state: { ...state, drafts: [] }, drafts: state.drafts };
}

export function clearNotice(state: QueueState): QueueState {
  return { ...state, notice: null };
}
