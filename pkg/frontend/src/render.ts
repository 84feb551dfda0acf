/** DOM rendering for the annotation views. All state transitions round-trip
 * the service; these functions only draw what they are given. */

import type { Exemplar, PendingBatch, ProgressEntry, SessionSummary } from "./api.js";
import { BatchDraft, segmentTokens } from "./state.js";

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderSentence(
  tokens: string[],
  headSpan: [number, number],
  tailSpan: [number, number],
): HTMLElement {
  const p = el("p", "sentence");
  for (const seg of segmentTokens(tokens, headSpan, tailSpan)) {
    const cls = seg.role === "head" ? "entity-head" : seg.role === "tail" ? "entity-tail" : "";
    const span = el("span", cls || undefined, seg.text);
    p.appendChild(span);
    p.appendChild(document.createTextNode(" "));
  }
  return p;
}

function renderExemplars(exemplars: Exemplar[] | undefined): HTMLElement {
  const box = el("div", "exemplars");
  for (const ex of exemplars ?? []) {
    box.appendChild(renderSentence(ex.tokens, ex.head_span, ex.tail_span));
  }
  return box;
}

export interface BatchViewHooks {
  onChange: () => void;
  onSubmit: () => void;
}

export function renderBatch(
  root: HTMLElement,
  draft: BatchDraft,
  hooks: BatchViewHooks,
): void {
  root.replaceChildren();
  const batch = draft.batch;
  root.appendChild(el("h2", undefined, `Pending batch ${batch.batch_id}`));

  const labelEntries = Object.entries(batch.existing_labels).sort(
    (a, b) => Number(a[0]) - Number(b[0]),
  );

  for (const item of batch.items) {
    const card = el("div", "card");
    card.dataset.instance = item.instance_id;
    const header = el("div", "card-header");
    header.appendChild(el("span", "instance-id", item.instance_id));
    header.appendChild(
      el("span", "confidence", `confidence ${item.disc_confidence.toFixed(3)}`),
    );
    card.appendChild(header);
    card.appendChild(renderSentence(item.tokens, item.head_span, item.tail_span));

    const controls = el("div", "controls");
    const select = document.createElement("select");
    select.className = "assign-select";
    const placeholder = document.createElement("option");
    placeholder.value = "";
    placeholder.textContent = "choose existing relation…";
    select.appendChild(placeholder);
    for (const [idx, name] of labelEntries) {
      const opt = document.createElement("option");
      opt.value = idx;
      opt.textContent = `${name} (#${idx})`;
      select.appendChild(opt);
    }
    for (const name of draft.draftedNames()) {
      const opt = document.createElement("option");
      opt.value = `new:${name}`;
      opt.textContent = `${name} (new, this batch)`;
      select.appendChild(opt);
    }
    const input = document.createElement("input");
    input.className = "create-input";
    input.placeholder = "…or name a new relation";
    const current = draft.draftFor(item.instance_id);
    if (current?.kind === "assign") select.value = String(current.labelIndex);
    if (current?.kind === "create") input.value = current.name;

    select.addEventListener("change", () => {
      if (!select.value) {
        draft.clear(item.instance_id);
      } else if (select.value.startsWith("new:")) {
        draft.create(item.instance_id, select.value.slice(4));
      } else {
        draft.assign(item.instance_id, Number(select.value));
      }
      input.value = "";
      hooks.onChange();
    });
    input.addEventListener("input", () => {
      draft.create(item.instance_id, input.value);
      select.value = "";
      hooks.onChange();
    });
    controls.appendChild(select);
    controls.appendChild(input);
    card.appendChild(controls);

    const err = draft.errorFor(item.instance_id);
    if (err) card.appendChild(el("div", "item-error", err));

    const labelIdx =
      current?.kind === "assign" ? String(current.labelIndex) : undefined;
    if (labelIdx !== undefined && batch.exemplars[labelIdx]?.length) {
      card.appendChild(renderExemplars(batch.exemplars[labelIdx]));
    }
    root.appendChild(card);
  }

  const bar = el("div", "submit-bar");
  const status = el(
    "span",
    "decided-count",
    `${draft.decidedCount}/${batch.items.length} decided`,
  );
  const button = document.createElement("button");
  button.className = "submit-button";
  button.textContent = "Submit batch";
  button.disabled = !draft.complete;
  button.addEventListener("click", hooks.onSubmit);
  bar.appendChild(status);
  bar.appendChild(button);
  root.appendChild(bar);
}

export function renderWaiting(root: HTMLElement, summary: SessionSummary | null): void {
  root.replaceChildren();
  const box = el("div", "waiting");
  box.appendChild(el("h2", undefined, "Waiting for the next round…"));
  if (summary) {
    box.appendChild(
      el(
        "p",
        undefined,
        `round ${summary.round}, ${summary.labeled} labeled / ${summary.unlabeled} remaining`,
      ),
    );
    if (summary.done) box.appendChild(el("p", "done", "Session complete."));
  }
  root.appendChild(box);
}

export function renderError(root: HTMLElement, message: string): void {
  const banner = el("div", "error-banner", `${message} — retrying`);
  root.prepend(banner);
}

export function renderProgress(root: HTMLElement, entries: ProgressEntry[]): void {
  root.replaceChildren();
  root.appendChild(el("h2", undefined, "Progress"));
  if (!entries.length) {
    root.appendChild(el("p", undefined, "no rounds completed yet"));
    return;
  }
  const width = 420;
  const height = 140;
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("class", "confidence-chart");
  const xs = (i: number) =>
    entries.length === 1 ? width / 2 : (i / (entries.length - 1)) * (width - 20) + 10;
  const ys = (v: number) => height - 10 - v * (height - 20);
  const points = entries
    .map((e, i) => `${xs(i).toFixed(1)},${ys(e.disc_confidence_mean).toFixed(1)}`)
    .join(" ");
  const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
  line.setAttribute("points", points);
  line.setAttribute("class", "confidence-line");
  line.setAttribute("fill", "none");
  const half = document.createElementNS("http://www.w3.org/2000/svg", "line");
  half.setAttribute("x1", "10");
  half.setAttribute("x2", String(width - 10));
  half.setAttribute("y1", String(ys(0.5)));
  half.setAttribute("y2", String(ys(0.5)));
  half.setAttribute("class", "half-line");
  svg.appendChild(half);
  svg.appendChild(line);
  root.appendChild(svg);

  const table = el("table", "progress-table");
  const head = el("tr");
  for (const col of ["round", "mean confidence", "labeled", "B3 F1"]) {
    head.appendChild(el("th", undefined, col));
  }
  table.appendChild(head);
  for (const e of entries) {
    const tr = el("tr");
    tr.appendChild(el("td", undefined, String(e.round)));
    tr.appendChild(el("td", undefined, e.disc_confidence_mean.toFixed(4)));
    tr.appendChild(el("td", undefined, String(e.labeled_total)));
    const f1 = e.metrics ? e.metrics["b3_f1"] : undefined;
    tr.appendChild(el("td", undefined, f1 === undefined ? "—" : f1.toFixed(4)));
    table.appendChild(tr);
  }
  root.appendChild(table);
}
