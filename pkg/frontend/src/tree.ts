/** The network menu: blocks as a tree, SuperBlocks expandable to their children. */

import { EditorStore, SUPERBLOCK_KIND } from "./state";
import type { GraphDoc } from "./types";

export class NetworkTree {
  constructor(
    private readonly root: HTMLElement,
    private readonly store: EditorStore,
  ) {
    this.root.classList.add("network-tree");
    store.subscribe(() => this.render());
    this.render();
  }

  render(): void {
    this.root.textContent = "";
    this.root.appendChild(this.renderLevel(this.store.state.doc));
  }

  private renderLevel(doc: GraphDoc): HTMLUListElement {
    const list = document.createElement("ul");
    for (const entry of doc.blocks) {
      const item = document.createElement("li");
      item.dataset.blockId = entry.block_id;
      const label = document.createElement("span");
      label.className = "tree-label";
      label.textContent = entry.display_name;
      item.appendChild(label);
      if (entry.kind_id === SUPERBLOCK_KIND) {
        item.classList.add("superblock");
        const body = doc.superblocks[entry.block_id];
        if (body) {
          item.appendChild(this.renderLevel(body.graph));
        }
      }
      list.appendChild(item);
    }
    return list;
  }
}
