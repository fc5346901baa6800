/** Training dashboard: session controls, 1 Hz metric polling, plots, inspector.
 *
 * Polling uses the since_epoch cursor so each request only carries new
 * epochs; the cursor is monotone and the plot never reorders or drops points.
 */

import { ApiClient, ApiError } from "./api";
import { EditorStore } from "./state";
import type { EpochRecord, Inspection } from "./types";

export interface Scheduler {
  setInterval(fn: () => void, ms: number): number;
  clearInterval(id: number): void;
}

const SERIES: { key: keyof EpochRecord; label: string }[] = [
  { key: "train_accuracy", label: "train acc" },
  { key: "test_accuracy", label: "test acc" },
  { key: "train_loss", label: "train loss" },
  { key: "test_loss", label: "test loss" },
];

export const POLL_INTERVAL_MS = 1000;

export class TrainingDashboard {
  private pollHandle: number | null = null;
  private polling = false;

  readonly statusBadge: HTMLElement;
  readonly plotRoot: HTMLElement;
  readonly inspectorRoot: HTMLElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly store: EditorStore,
    private readonly api: ApiClient,
    private readonly pushGraph: () => Promise<unknown>,
    private readonly scheduler: Scheduler = {
      setInterval: (fn, ms) => window.setInterval(fn, ms),
      clearInterval: (id) => window.clearInterval(id),
    },
  ) {
    this.root.classList.add("dashboard");
    this.statusBadge = document.createElement("span");
    this.statusBadge.className = "status-badge";
    this.plotRoot = document.createElement("div");
    this.plotRoot.className = "metric-plot";
    this.inspectorRoot = document.createElement("div");
    this.inspectorRoot.className = "inspector";
    this.root.append(this.statusBadge, this.plotRoot, this.inspectorRoot);
    store.subscribe(() => this.renderPlot());
    this.renderPlot();
  }

  /** A dirty graph must survive push + validate before training can start. */
  async start(): Promise<string | null> {
    if (this.store.state.dirty) {
      await this.pushGraph();
    }
    if (this.store.state.diagnostics.some((d) => d.severity === "error")) {
      this.store.setToast("fix validation errors before training");
      return null;
    }
    try {
      const { session_id } = await this.api.createSession();
      await this.api.train(session_id);
      this.store.setSession(session_id, "running");
      this.beginPolling();
      return session_id;
    } catch (err) {
      if (err instanceof ApiError) {
        this.store.setToast(`training rejected: ${err.message}`);
        return null;
      }
      throw err;
    }
  }

  async stop(): Promise<void> {
    const sid = this.store.state.sessionId;
    if (!sid) {
      return;
    }
    try {
      const view = await this.api.stop(sid);
      this.store.setSessionStatus(view.status);
    } catch (err) {
      if (!(err instanceof ApiError)) {
        throw err;
      }
    }
  }

  beginPolling(): void {
    if (this.pollHandle !== null) {
      return;
    }
    this.pollHandle = this.scheduler.setInterval(() => {
      void this.pollOnce();
    }, POLL_INTERVAL_MS);
  }

  endPolling(): void {
    if (this.pollHandle !== null) {
      this.scheduler.clearInterval(this.pollHandle);
      this.pollHandle = null;
    }
  }

  /** One poll tick: fetch new records after the cursor, track session status. */
  async pollOnce(): Promise<void> {
    const sid = this.store.state.sessionId;
    if (!sid || this.polling) {
      return;
    }
    this.polling = true;
    try {
      const response = await this.api.metrics(sid, this.store.state.pollCursor);
      this.store.appendRecords(response.records);
      this.store.setSessionStatus(response.status);
      if (response.status !== "running") {
        this.endPolling();
      }
    } finally {
      this.polling = false;
    }
  }

  renderPlot(): void {
    const { records, sessionStatus } = this.store.state;
    this.statusBadge.textContent = sessionStatus ?? "idle";
    this.statusBadge.dataset.status = sessionStatus ?? "idle";
    this.plotRoot.textContent = "";
    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    svg.setAttribute("viewBox", "0 0 320 120");
    const maxEpoch = Math.max(1, ...records.map((r) => r.epoch));
    for (const series of SERIES) {
      const values = records.map((r) => r[series.key] as number);
      const top = Math.max(1e-9, ...values.map((v) => Math.abs(v)));
      const polyline = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
      polyline.classList.add("series-line", `series-${series.key}`);
      polyline.setAttribute(
        "points",
        records
          .map((r, i) => `${(r.epoch / maxEpoch) * 320},${120 - (Math.abs(values[i]) / top) * 110}`)
          .join(" "),
      );
      svg.appendChild(polyline);
      records.forEach((r, i) => {
        const point = document.createElementNS("http://www.w3.org/2000/svg", "circle");
        point.classList.add("point", `series-${series.key}`);
        point.setAttribute("cx", String((r.epoch / maxEpoch) * 320));
        point.setAttribute("cy", String(120 - (Math.abs(values[i]) / top) * 110));
        point.setAttribute("r", "2");
        point.dataset.epoch = String(r.epoch);
        svg.appendChild(point);
      });
    }
    this.plotRoot.appendChild(svg);
  }

  /** Fetch and render a block inspection: shapes plus heatmap or stall badge. */
  async inspect(blockId: string): Promise<Inspection | null> {
    const sid = this.store.state.sessionId;
    if (!sid) {
      return null;
    }
    let inspection: Inspection;
    try {
      inspection = await this.api.inspect(sid, blockId);
    } catch (err) {
      if (err instanceof ApiError) {
        this.store.setToast(`inspect failed: ${err.message}`);
        return null;
      }
      throw err;
    }
    this.renderInspection(inspection);
    return inspection;
  }

  renderInspection(inspection: Inspection): void {
    this.inspectorRoot.textContent = "";
    const header = document.createElement("div");
    header.className = "inspect-header";
    header.textContent = `${inspection.block_id}: ${inspection.status}`;
    this.inspectorRoot.appendChild(header);

    const dims = document.createElement("div");
    dims.className = "inspect-dims";
    const fmt = (shapes: (unknown[] | null)[]) =>
      shapes.map((s) => (s ? `[${s.join(", ")}]` : "null")).join(" ");
    dims.textContent = `in: ${fmt(inspection.input_shapes)}  out: ${fmt(inspection.output_shapes)}`;
    this.inspectorRoot.appendChild(dims);

    if (inspection.stalled || inspection.status === "failed" || !inspection.heatmaps) {
      const badge = document.createElement("span");
      badge.className = "stalled-badge";
      badge.textContent = inspection.error
        ? `${inspection.error.code}: ${inspection.error.message}`
        : "stalled: no signal reached this block";
      this.inspectorRoot.appendChild(badge);
      return;
    }
    for (const matrix of inspection.heatmaps) {
      if (!matrix) {
        continue;
      }
      this.inspectorRoot.appendChild(renderHeatmap(matrix));
    }
  }
}

/** Downsampled value matrix as a colored cell grid. */
export function renderHeatmap(matrix: number[][]): HTMLElement {
  const grid = document.createElement("div");
  grid.className = "heatmap";
  grid.dataset.rows = String(matrix.length);
  grid.dataset.cols = String(matrix[0]?.length ?? 0);
  let lo = Infinity;
  let hi = -Infinity;
  for (const row of matrix) {
    for (const v of row) {
      lo = Math.min(lo, v);
      hi = Math.max(hi, v);
    }
  }
  const span = hi - lo || 1;
  for (const row of matrix) {
    const rowEl = document.createElement("div");
    rowEl.className = "heatmap-row";
    for (const v of row) {
      const cell = document.createElement("span");
      cell.className = "heatmap-cell";
      const t = (v - lo) / span;
      cell.style.backgroundColor = `rgb(${Math.round(255 * t)}, ${Math.round(64 * t)}, ${Math.round(
        255 * (1 - t),
      )})`;
      cell.title = v.toPrecision(4);
      rowEl.appendChild(cell);
    }
    grid.appendChild(rowEl);
  }
  return grid;
}
