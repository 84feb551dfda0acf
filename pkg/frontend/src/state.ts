/** Draft decisions for one pending batch.
 *
 * The view is a mirror of the server's batch plus per-item draft state;
 * nothing here is authoritative. Submission is enabled only once every item
 * has a decision, created names are trimmed and must be nonempty, and a
 * batch id is submitted at most once.
 */

import type { Decision, LabelSubmission, PendingBatch } from "./api.js";

export type Draft =
  | { kind: "assign"; labelIndex: number }
  | { kind: "create"; name: string };

export class BatchDraft {
  readonly batch: PendingBatch;
  private drafts = new Map<string, Draft>();
  private errors = new Map<string, string>();

  constructor(batch: PendingBatch) {
    this.batch = batch;
  }

  assign(instanceId: string, labelIndex: number): void {
    this.requireItem(instanceId);
    if (!(String(labelIndex) in this.batch.existing_labels)) {
      throw new Error(`no existing label with index ${labelIndex}`);
    }
    this.drafts.set(instanceId, { kind: "assign", labelIndex });
    this.errors.delete(instanceId);
  }

  create(instanceId: string, name: string): void {
    this.requireItem(instanceId);
    const trimmed = name.trim();
    if (!trimmed) {
      this.errors.set(instanceId, "relation name must be nonempty");
      this.drafts.delete(instanceId);
      return;
    }
    this.drafts.set(instanceId, { kind: "create", name: trimmed });
    this.errors.delete(instanceId);
  }

  clear(instanceId: string): void {
    this.requireItem(instanceId);
    this.drafts.delete(instanceId);
    this.errors.delete(instanceId);
  }

  draftFor(instanceId: string): Draft | undefined {
    return this.drafts.get(instanceId);
  }

  errorFor(instanceId: string): string | undefined {
    return this.errors.get(instanceId);
  }

  setErrors(byInstance: Record<string, string>): void {
    for (const [id, msg] of Object.entries(byInstance)) {
      this.errors.set(id, msg);
    }
  }

  /** Names drafted as creations so far, deduplicated, in first-use order. */
  draftedNames(): string[] {
    const seen: string[] = [];
    for (const item of this.batch.items) {
      const d = this.drafts.get(item.instance_id);
      if (d?.kind === "create" && !seen.includes(d.name)) seen.push(d.name);
    }
    return seen;
  }

  get complete(): boolean {
    return this.batch.items.every((it) => this.drafts.has(it.instance_id));
  }

  get decidedCount(): number {
    return this.batch.items.filter((it) => this.drafts.has(it.instance_id)).length;
  }

  /** Build the submission; repeated creations of one name share the action. */
  toSubmission(): LabelSubmission {
    if (!this.complete) {
      throw new Error("every item needs a decision before submitting");
    }
    const decisions: Decision[] = this.batch.items.map((item) => {
      const d = this.drafts.get(item.instance_id)!;
      return d.kind === "assign"
        ? { instance_id: item.instance_id, action: "assign", label_index: d.labelIndex }
        : { instance_id: item.instance_id, action: "create", surface_name: d.name };
    });
    return { batch_id: this.batch.batch_id, decisions };
  }

  private requireItem(instanceId: string): void {
    if (!this.batch.items.some((it) => it.instance_id === instanceId)) {
      throw new Error(`instance ${instanceId} is not part of this batch`);
    }
  }
}

/** Tracks which batch ids have already been posted, so a submission goes
 * out at most once per batch. */
export class SubmissionGuard {
  private sent = new Set<string>();

  tryMark(batchId: string): boolean {
    if (this.sent.has(batchId)) return false;
    this.sent.add(batchId);
    return true;
  }

  unmark(batchId: string): void {
    this.sent.delete(batchId);
  }

  has(batchId: string): boolean {
    return this.sent.has(batchId);
  }
}

export interface TokenSegment {
  text: string;
  role: "plain" | "head" | "tail";
}

/** Split a sentence into plain/head/tail segments for highlighting.
 * Spans are half-open token ranges and never overlap. */
export function segmentTokens(
  tokens: string[],
  headSpan: [number, number],
  tailSpan: [number, number],
): TokenSegment[] {
  const roleAt = (i: number): TokenSegment["role"] => {
    if (i >= headSpan[0] && i < headSpan[1]) return "head";
    if (i >= tailSpan[0] && i < tailSpan[1]) return "tail";
    return "plain";
  };
  const segments: TokenSegment[] = [];
  for (let i = 0; i < tokens.length; i++) {
    const role = roleAt(i);
    const last = segments[segments.length - 1];
    if (last && last.role === role) {
      last.text += ` ${tokens[i]}`;
    } else {
      segments.push({ text: tokens[i]!, role });
    }
  }
  return segments;
}
