/** Acceptance: merging five chained FC nodes yields one SuperBlock node whose
 * tree entry lists the five children.
 */

import { beforeEach, expect, test } from "vitest";

import { mergeSelection, mountEditor } from "../src/app";
import type { GraphDoc } from "../src/types";
import { FakeServer } from "./fake_server";

import johnFixedDoc from "./fixtures/john_fixed_doc.json";
import johnIds from "./fixtures/john_ids.json";

let fake: FakeServer;

beforeEach(() => {
  fake = new FakeServer();
});

async function mountWithFixedDoc() {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app")!;
  const app = await mountEditor(root, { fetchFn: fake.fetch });
  app.store.replaceDoc(structuredClone(johnFixedDoc) as GraphDoc, {
    dirty: true,
    datasetPath: "digits.dbds",
  });
  await app.canvas.push();
  return { root, app };
}

test("five selected FC nodes merge into one SuperBlock node", async () => {
  const { root, app } = await mountWithFixedDoc();
  const ids = johnIds as { fcs: string[]; input: string; output: string };
  expect(root.querySelectorAll(".canvas-node").length).toBe(7);

  app.store.setSelection(ids.fcs);
  const sbId = await mergeSelection(app.store, app.api, "Backbone");
  expect(sbId).not.toBeNull();

  const nodes = root.querySelectorAll<HTMLElement>("#canvas .canvas-node");
  expect(nodes.length).toBe(3); // Input, Backbone, Output
  const superblocks = root.querySelectorAll<HTMLElement>("#canvas .canvas-node.superblock");
  expect(superblocks.length).toBe(1);
  expect(superblocks[0].dataset.blockId).toBe(sbId!);
  expect(superblocks[0].querySelector(".node-title")?.textContent).toBe("Backbone");
  for (const fc of ids.fcs) {
    expect(root.querySelector(`#canvas .canvas-node[data-block-id="${fc}"]`)).toBeNull();
  }
});

test("the network tree lists the SuperBlock with its five children", async () => {
  const { root, app } = await mountWithFixedDoc();
  const ids = johnIds as { fcs: string[] };
  app.store.setSelection(ids.fcs);
  const sbId = await mergeSelection(app.store, app.api, "Backbone");

  const item = root.querySelector<HTMLElement>(`#tree li[data-block-id="${sbId}"]`);
  expect(item).not.toBeNull();
  expect(item!.classList.contains("superblock")).toBe(true);
  const children = item!.querySelectorAll(":scope > ul > li");
  expect(children.length).toBe(5);
  const childIds = [...children].map((li) => (li as HTMLElement).dataset.blockId);
  expect([...childIds].sort()).toEqual([...ids.fcs].sort());
});

test("merging a disconnected selection surfaces the server rejection", async () => {
  const { app } = await mountWithFixedDoc();
  const ids = johnIds as { fcs: string[]; input: string; output: string };
  app.store.setSelection([ids.input, ids.output]);
  await expect(mergeSelection(app.store, app.api, "Nope")).rejects.toMatchObject({
    code: "disconnected-selection",
    status: 422,
  });
});

test("saving a branching SuperBlock surfaces the server 422 verbatim", async () => {
  const { app } = await mountWithFixedDoc();
  const recorded = (await import("./fixtures/save_custom_rejection.json")).default as {
    block_id: string;
    body: { error: { code: string; message: string } };
  };
  const err = await app.api.saveCustom(recorded.block_id).catch((e) => e);
  expect(err).toMatchObject({
    status: 422,
    code: recorded.body.error.code,
    message: recorded.body.error.message,
  });
});
