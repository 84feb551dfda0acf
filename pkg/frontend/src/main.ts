/** Application shell: poll the service, render whichever view applies, and
 * push submissions. The browser keeps no authoritative state, so reloading
 * at any point reproduces the same view from the service. */

import { ApiClient } from "./api.js";
import { renderBatch, renderError, renderProgress, renderWaiting } from "./render.js";
import { BatchDraft, SubmissionGuard } from "./state.js";

const POLL_MS = 1500;

export class App {
  private api: ApiClient;
  private guard = new SubmissionGuard();
  private draft: BatchDraft | null = null;
  private view: "annotate" | "progress" = "annotate";
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private root: HTMLElement,
    private nav: HTMLElement,
    base = "",
  ) {
    this.api = new ApiClient(base);
  }

  start(): void {
    this.renderNav();
    void this.tick();
  }

  private renderNav(): void {
    this.nav.replaceChildren();
    for (const [label, view] of [
      ["Annotate", "annotate"],
      ["Progress", "progress"],
    ] as const) {
      const button = document.createElement("button");
      button.textContent = label;
      button.className = this.view === view ? "nav-active" : "";
      button.addEventListener("click", () => {
        this.view = view;
        this.renderNav();
        void this.tick();
      });
      this.nav.appendChild(button);
    }
  }

  private schedule(): void {
    if (this.timer) clearTimeout(this.timer);
    this.timer = setTimeout(() => void this.tick(), POLL_MS);
  }

  async tick(): Promise<void> {
    try {
      if (this.view === "progress") {
        renderProgress(this.root, await this.api.getProgress());
        this.schedule();
        return;
      }
      const batch = await this.api.getBatch();
      if (!batch) {
        this.draft = null;
        renderWaiting(this.root, await this.api.getSession());
        this.schedule();
        return;
      }
      if (!this.draft || this.draft.batch.batch_id !== batch.batch_id) {
        this.draft = new BatchDraft(batch);
      }
      this.redraw();
    } catch (err) {
      renderError(this.root, err instanceof Error ? err.message : String(err));
      this.schedule();
    }
  }

  private redraw(): void {
    if (!this.draft) return;
    renderBatch(this.root, this.draft, {
      onChange: () => this.redraw(),
      onSubmit: () => void this.submit(),
    });
  }

  async submit(): Promise<void> {
    if (!this.draft?.complete) return;
    const submission = this.draft.toSubmission();
    if (!this.guard.tryMark(submission.batch_id)) return;
    try {
      const result = await this.api.postLabels(submission);
      if (result.status === 200) {
        this.draft = null;
        this.view = "progress";
        this.renderNav();
        await this.tick();
        return;
      }
      if (result.status === 409) {
        // Stale batch: the server's pending batch is authoritative.
        this.draft = null;
        await this.tick();
        return;
      }
      // 422: keep the draft, surface the message, allow a corrected resend.
      this.guard.unmark(submission.batch_id);
      if (this.draft) {
        this.draft.setErrors({
          [submission.decisions[0]?.instance_id ?? ""]: result.body.detail ?? "rejected",
        });
      }
      this.redraw();
    } catch (err) {
      this.guard.unmark(submission.batch_id);
      renderError(this.root, err instanceof Error ? err.message : String(err));
    }
  }
}

declare global {
  interface Window {
    ardApp?: App;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const app = new App(
    document.getElementById("app")!,
    document.getElementById("nav")!,
  );
  window.ardApp = app;
  app.start();
}
