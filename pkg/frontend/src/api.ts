/** Typed client for the /v1 annotation endpoints. The service is the only
 * source of truth; this module holds no state beyond the base URL. */

export interface BatchItem {
  instance_id: string;
  tokens: string[];
  head_span: [number, number];
  tail_span: [number, number];
  disc_confidence: number;
}

export interface Exemplar {
  instance_id: string;
  tokens: string[];
  head_span: [number, number];
  tail_span: [number, number];
}

export interface PendingBatch {
  batch_id: string;
  items: BatchItem[];
  existing_labels: Record<string, string>;
  exemplars: Record<string, Exemplar[]>;
}

export interface SessionSummary {
  round: number;
  labeled: number;
  unlabeled: number;
  label_names: Record<string, string>;
  mean_confidence: number | null;
  done: boolean;
}

export interface ProgressEntry {
  round: number;
  disc_confidence_mean: number;
  labeled_total: number;
  metrics: Record<string, number> | null;
  early_stop: boolean;
}

export type Decision =
  | { instance_id: string; action: "assign"; label_index: number }
  | { instance_id: string; action: "create"; surface_name: string };

export interface LabelSubmission {
  batch_id: string;
  decisions: Decision[];
}

export interface SubmitResult {
  status: number;
  body: { detail?: string; applied?: number; session?: SessionSummary };
}

export class ApiClient {
  constructor(private base: string = "") {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async getSession(): Promise<SessionSummary | null> {
    const resp = await fetch(this.url("/v1/session"));
    if (resp.status === 404) return null;
    if (!resp.ok) throw new Error(`session fetch failed: ${resp.status}`);
    return (await resp.json()) as SessionSummary;
  }

  /** Returns null when no batch is pending (204). */
  async getBatch(): Promise<PendingBatch | null> {
    const resp = await fetch(this.url("/v1/batch"));
    if (resp.status === 204) return null;
    if (!resp.ok) throw new Error(`batch fetch failed: ${resp.status}`);
    return (await resp.json()) as PendingBatch;
  }

  async postLabels(submission: LabelSubmission): Promise<SubmitResult> {
    const resp = await fetch(this.url("/v1/labels"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(submission),
    });
    return { status: resp.status, body: await resp.json() };
  }

  async getProgress(): Promise<ProgressEntry[]> {
    const resp = await fetch(this.url("/v1/progress"));
    if (!resp.ok) throw new Error(`progress fetch failed: ${resp.status}`);
    return (await resp.json()) as ProgressEntry[];
  }
}
