/** Composition root: wires palette, canvas, tree, and dashboard together. */

import { ApiClient } from "./api";
import { GraphCanvas } from "./canvas";
import { TrainingDashboard } from "./dashboard";
import { Palette } from "./palette";
import { EditorStore } from "./state";

export interface EditorApp {
  store: EditorStore;
  api: ApiClient;
  canvas: GraphCanvas;
  dashboard: TrainingDashboard;
}

export interface AppOptions {
  baseUrl?: string;
  fetchFn?: typeof fetch;
}

export async function mountEditor(root: HTMLElement, options: AppOptions = {}): Promise<EditorApp> {
  root.innerHTML = `
    <div class="pane network-menu"><h2>Network</h2><div id="tree"></div></div>
    <div class="pane canvas-pane">
      <div class="toolbar">
        <button id="validate">Validate</button>
        <button id="merge">Merge selection</button>
        <button id="train">Train</button>
        <button id="stop">Stop</button>
        <span id="toast" class="toast"></span>
      </div>
      <div id="canvas"></div>
    </div>
    <div class="pane blocks-pane"><h2>Blocks</h2><div id="palette"></div></div>
    <div class="pane results-pane"><h2>Results</h2><div id="dashboard"></div></div>
  `;
  const store = new EditorStore();
  const api = new ApiClient(options.baseUrl ?? "", options.fetchFn);

  const canvas = new GraphCanvas(root.querySelector<HTMLElement>("#canvas")!, store, api);
  new Palette(root.querySelector<HTMLElement>("#palette")!, store);
  const { NetworkTree } = await import("./tree");
  new NetworkTree(root.querySelector<HTMLElement>("#tree")!, store);
  const dashboard = new TrainingDashboard(
    root.querySelector<HTMLElement>("#dashboard")!,
    store,
    api,
    () => canvas.push(),
  );

  const catalog = await api.catalog();
  store.setCatalog(catalog.blocks);
  const project = await api.getGraph();
  store.replaceDoc(project.graph, {
    dirty: false,
    datasetPath: project.dataset_path,
    optimizer: project.optimizer,
  });

  root.querySelector("#validate")?.addEventListener("click", () => void canvas.push());
  root.querySelector("#train")?.addEventListener("click", () => void dashboard.start());
  root.querySelector("#stop")?.addEventListener("click", () => void dashboard.stop());
  root.querySelector("#merge")?.addEventListener("click", () => {
    const name = window.prompt("SuperBlock name", "SuperBlock") ?? "SuperBlock";
    void mergeSelection(store, api, name);
  });
  store.subscribe((state) => {
    const toast = root.querySelector<HTMLElement>("#toast");
    if (toast) {
      toast.textContent = state.toast ?? "";
    }
  });
  return { store, api, canvas, dashboard };
}

/** Merge the selected blocks into a SuperBlock via the server. */
export async function mergeSelection(
  store: EditorStore,
  api: ApiClient,
  name: string,
): Promise<string | null> {
  const selection = store.state.selection;
  if (!selection.length) {
    store.setToast("select blocks to merge");
    return null;
  }
  const response = await api.merge(selection, name);
  store.replaceDoc(response.graph, {
    dirty: false,
    datasetPath: response.dataset_path,
    optimizer: response.optimizer,
  });
  store.setSelection([response.superblock_id]);
  return response.superblock_id;
}
