import type { DecideResult, DecisionAction, QueueStats, ReviewItem } from "./types.js";

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/**
 * Thin client over the guard /v1/review/* and /v1/health endpoints.
 * The fetch function is injectable so tests can stub the network.
 */
export class GuardApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async health(): Promise<{ status: string; model_version: string }> {
    const resp = await this.fetchFn(this.url("/v1/health"));
    if (!resp.ok) throw new Error(`health check failed: ${resp.status}`);
    return resp.json();
  }

  /** The nine canonical labels, in the service's fixed order. */
  async labels(): Promise<string[]> {
    const resp = await this.fetchFn(this.url("/v1/review/labels"));
    if (!resp.ok) throw new Error(`labels fetch failed: ${resp.status}`);
    const body = (await resp.json()) as { labels: string[] };
    return body.labels;
  }

  async queue(limit: number): Promise<ReviewItem[]> {
    const resp = await this.fetchFn(this.url(`/v1/review/next?limit=${limit}`));
    if (!resp.ok) throw new Error(`queue fetch failed: ${resp.status}`);
    const body = (await resp.json()) as { items: ReviewItem[] };
    return body.items;
  }

  async stats(): Promise<QueueStats> {
    const resp = await this.fetchFn(this.url("/v1/review/stats"));
    if (!resp.ok) throw new Error(`stats fetch failed: ${resp.status}`);
    return resp.json();
  }

  async decide(id: string, action: DecisionAction, label?: string): Promise<DecideResult> {
    const payload: Record<string, string> = { decision: action };
    if (label !== undefined) payload.label = label;
    let resp: Response;
    try {
      resp = await this.fetchFn(this.url(`/v1/review/${encodeURIComponent(id)}`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      });
    } catch (err) {
      return { kind: "network", message: err instanceof Error ? err.message : String(err) };
    }
    if (resp.status === 409) return { kind: "conflict" };
    if (resp.status === 404) return { kind: "gone" };
    if (resp.status === 400) {
      const body = (await resp.json().catch(() => ({ error: "bad request" }))) as {
        error?: string;
      };
      return { kind: "invalid", message: body.error ?? "bad request" };
    }
    if (!resp.ok) return { kind: "network", message: `unexpected status ${resp.status}` };
    const body = (await resp.json()) as { state: string; label: string | null };
    return { kind: "ok", state: body.state, label: body.label };
  }
}
