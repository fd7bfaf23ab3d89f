/** Wire types for the guard service review API. */

export interface ReviewItem {
  id: string;
  text: string;
  proposed: string;
  confidence: number;
  round: number;
}

export type DecisionAction = "accept" | "reject" | "relabel";

export interface QueueStats {
  total: number;
  by_state: Record<string, number>;
  by_round: Record<string, Record<string, number>>;
  by_label: Record<string, number>;
}

/** Outcome of posting a decision; 409/404 are ordinary results, not errors. */
export type DecideResult =
  | { kind: "ok"; state: string; label: string | null }
  | { kind: "conflict" }
  | { kind: "gone" }
  | { kind: "invalid"; message: string }
  | { kind: "network"; message: string };

export interface PendingDecision {
  id: string;
  action: DecisionAction;
  label?: string;
}
