/** The architecture canvas: block nodes, terminal dots, connection edges.
 *
 * Every red outline and yellow terminal comes from the latest server
 * diagnostics; the canvas itself never decides what is broken. Edits are
 * optimistic: a dragged connection lands in the local document immediately
 * and is rolled back when the server rejects the pushed document.
 */

import { ApiClient, ApiError } from "./api";
import { EditorStore, SUPERBLOCK_KIND } from "./state";
import type { Diagnostic } from "./types";

interface PendingConnect {
  blockId: string;
  port: number;
}

export class GraphCanvas {
  private pending: PendingConnect | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly store: EditorStore,
    private readonly api: ApiClient,
  ) {
    this.root.classList.add("graph-canvas");
    store.subscribe(() => this.render());
    this.render();
  }

  /** Push the mirror to the server, then refresh diagnostics. */
  async push(): Promise<Diagnostic[]> {
    await this.api.putGraph({
      graph: this.store.state.doc,
      dataset_path: this.store.state.datasetPath,
      optimizer: this.store.state.optimizer,
    });
    const { diagnostics } = await this.api.validate();
    this.store.markClean();
    this.store.setDiagnostics(diagnostics);
    return diagnostics;
  }

  beginConnect(blockId: string, port: number): void {
    this.pending = { blockId, port };
  }

  /** Optimistic edge: applied locally, rolled back if the server refuses it. */
  async completeConnect(dstBlockId: string, dstPort: number): Promise<boolean> {
    if (!this.pending) {
      return false;
    }
    const src: [string, number] = [this.pending.blockId, this.pending.port];
    const dst: [string, number] = [dstBlockId, dstPort];
    this.pending = null;
    this.store.localAddConnection(src, dst);
    try {
      await this.push();
      return true;
    } catch (err) {
      this.store.localRemoveConnection(src, dst);
      if (err instanceof ApiError) {
        this.store.setToast(`connection rejected: ${err.message}`);
        return false;
      }
      throw err;
    }
  }

  /** Map a diagnostic to the block element visible at the top level. */
  private visibleBlockId(diag: Diagnostic): string | null {
    if (!diag.target) {
      return null;
    }
    const candidates = [diag.target.block_id, ...[...diag.path].reverse()];
    for (const bid of candidates) {
      if (this.store.state.doc.blocks.some((b) => b.block_id === bid)) {
        return bid;
      }
    }
    return null;
  }

  render(): void {
    const { doc, diagnostics, selection } = this.store.state;
    this.root.textContent = "";

    const errorBlocks = new Set<string>();
    const stalledTerminals = new Set<string>(); // "bid/dir/port"
    const stalledInside = new Set<string>();
    for (const diag of diagnostics) {
      const visible = this.visibleBlockId(diag);
      if (!visible) {
        continue;
      }
      if (diag.severity === "error" && diag.target?.kind === "block") {
        errorBlocks.add(visible);
      } else if (diag.code === "terminal-stalled" && diag.target?.kind === "terminal") {
        if (visible === diag.target.block_id) {
          stalledTerminals.add(`${visible}/${diag.target.direction}/${diag.target.index}`);
        } else {
          stalledInside.add(visible);
        }
      } else if (diag.severity === "error") {
        errorBlocks.add(visible);
      }
    }

    for (const entry of doc.blocks) {
      const node = document.createElement("div");
      node.className = "canvas-node";
      node.dataset.blockId = entry.block_id;
      node.dataset.kindId = entry.kind_id;
      node.style.left = `${entry.position[0]}px`;
      node.style.top = `${entry.position[1]}px`;
      if (entry.kind_id === SUPERBLOCK_KIND) {
        node.classList.add("superblock");
      }
      if (errorBlocks.has(entry.block_id)) {
        node.classList.add("error-outline");
      }
      if (stalledInside.has(entry.block_id)) {
        node.classList.add("stalled-inside");
      }
      if (selection.includes(entry.block_id)) {
        node.classList.add("selected");
      }

      const title = document.createElement("span");
      title.className = "node-title";
      title.textContent = entry.display_name;
      node.appendChild(title);

      const signature = this.store.terminals(entry);
      const inRow = document.createElement("div");
      inRow.className = "terminals in";
      signature.inputs.forEach((name, port) => {
        inRow.appendChild(this.terminalDot(entry.block_id, "in", port, name, stalledTerminals));
      });
      const outRow = document.createElement("div");
      outRow.className = "terminals out";
      signature.outputs.forEach((name, port) => {
        outRow.appendChild(this.terminalDot(entry.block_id, "out", port, name, stalledTerminals));
      });
      node.prepend(inRow);
      node.appendChild(outRow);

      node.addEventListener("click", (ev) => {
        this.store.toggleSelect(entry.block_id, ev.shiftKey);
      });
      this.root.appendChild(node);
    }

    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    svg.classList.add("edges");
    for (const conn of doc.connections) {
      const line = document.createElementNS("http://www.w3.org/2000/svg", "line");
      line.dataset.src = `${conn.src[0]}/${conn.src[1]}`;
      line.dataset.dst = `${conn.dst[0]}/${conn.dst[1]}`;
      svg.appendChild(line);
    }
    this.root.appendChild(svg);
  }

  private terminalDot(
    blockId: string,
    direction: "in" | "out",
    port: number,
    name: string,
    stalled: Set<string>,
  ): HTMLElement {
    const dot = document.createElement("span");
    dot.className = `terminal ${direction}`;
    dot.dataset.blockId = blockId;
    dot.dataset.direction = direction;
    dot.dataset.port = String(port);
    dot.title = name;
    if (stalled.has(`${blockId}/${direction}/${port}`)) {
      dot.classList.add("stalled");
    }
    if (direction === "out") {
      dot.addEventListener("pointerdown", () => this.beginConnect(blockId, port));
    } else {
      dot.addEventListener("pointerup", () => {
        void this.completeConnect(blockId, port);
      });
    }
    return dot;
  }
}
