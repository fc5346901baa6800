/** The blocks pane: builtin kinds grouped main/misc, custom kinds below. */

import { EditorStore } from "./state";
import type { KindCategory } from "./types";

const GROUP_ORDER: KindCategory[] = ["main", "misc", "custom"];
const GROUP_LABELS: Record<KindCategory, string> = {
  main: "Main blocks",
  misc: "Misc blocks",
  custom: "Custom blocks",
};

export class Palette {
  constructor(
    private readonly root: HTMLElement,
    private readonly store: EditorStore,
    private readonly onAdd?: (blockId: string) => void,
  ) {
    this.root.classList.add("palette");
    store.subscribe(() => this.render());
    this.render();
  }

  render(): void {
    this.root.textContent = "";
    for (const category of GROUP_ORDER) {
      const kinds = this.store.state.catalog.filter(
        (k) => k.category === category && k.kind_id !== "__superblock__",
      );
      if (!kinds.length && category === "custom") {
        continue;
      }
      const group = document.createElement("section");
      group.className = `palette-group ${category}`;
      const heading = document.createElement("h3");
      heading.textContent = GROUP_LABELS[category];
      group.appendChild(heading);
      const list = document.createElement("ul");
      for (const kind of kinds) {
        const item = document.createElement("li");
        item.dataset.kindId = kind.kind_id;
        const label = document.createElement("span");
        label.textContent = kind.kind_id;
        const button = document.createElement("button");
        button.className = "add-block";
        button.textContent = "+";
        button.title = `Add ${kind.kind_id}`;
        button.addEventListener("click", () => {
          const entry = this.store.localAddBlock(kind.kind_id);
          this.onAdd?.(entry.block_id);
        });
        item.append(label, button);
        list.appendChild(item);
      }
      group.appendChild(list);
      this.root.appendChild(group);
    }
  }
}
