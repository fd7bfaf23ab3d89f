/**
 * Keyboard-first review bindings: number keys 1-9 relabel to the matching
 * canonical label, space accepts the proposal, x rejects, j/k move between
 * cards. Everything else is ignored.
 */

export type KeyAction =
  | { type: "accept" }
  | { type: "reject" }
  | { type: "relabel"; labelIndex: number }
  | { type: "next" }
  | { type: "prev" };

export function actionForKey(key: string, labelCount: number): KeyAction | null {
  if (key === " ") return { type: "accept" };
  if (key === "x" || key === "X") return { type: "reject" };
  if (key === "j" || key === "ArrowDown") return { type: "next" };
  if (key === "k" || key === "ArrowUp") return { type: "prev" };
  if (/^[1-9]$/.test(key)) {
    const labelIndex = Number(key) - 1;
    if (labelIndex < labelCount) return { type: "relabel", labelIndex };
  }
  return null;
}
