/** Acceptance: the debug flow is driven entirely by server diagnostics, and a
 * 5-epoch run plots 5 points per metric series through since_epoch polling.
 */

import { beforeEach, describe, expect, test } from "vitest";

import { mountEditor } from "../src/app";
import type { Scheduler } from "../src/dashboard";
import type { GraphDoc } from "../src/types";
import { FakeServer } from "./fake_server";

import johnBuggyDoc from "./fixtures/john_buggy_doc.json";
import johnIds from "./fixtures/john_ids.json";
import xorDoc from "./fixtures/xor_doc.json";

const manualScheduler: Scheduler = {
  setInterval: () => 1,
  clearInterval: () => undefined,
};

function clone<T>(x: T): T {
  return structuredClone(x);
}

async function mount(fake: FakeServer) {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app")!;
  const app = await mountEditor(root, { fetchFn: fake.fetch });
  return { root, app };
}

describe("editor fidelity", () => {
  let fake: FakeServer;

  beforeEach(() => {
    fake = new FakeServer();
  });

  test("buggy build shows exactly one red node and yellow stalled terminals from server diagnostics", async () => {
    const { root, app } = await mount(fake);
    app.store.replaceDoc(clone(johnBuggyDoc) as GraphDoc, {
      dirty: true,
      datasetPath: "digits.dbds",
    });
    await app.canvas.push();

    const red = root.querySelectorAll<HTMLElement>(".canvas-node.error-outline");
    expect(red.length).toBe(1);
    expect(red[0].dataset.blockId).toBe((johnIds as { fcs: string[] }).fcs[0]);

    const yellow = root.querySelectorAll(".terminal.stalled");
    expect(yellow.length).toBeGreaterThanOrEqual(1);
    // 1:1 with the server's diagnostics, never locally invented
    const serverStalls = app.store.state.diagnostics.filter((d) => d.code === "terminal-stalled");
    expect(yellow.length).toBe(serverStalls.length);
    const serverErrors = app.store.state.diagnostics.filter((d) => d.severity === "error");
    expect(serverErrors.length).toBe(1);
  });

  test("setting flatten_input on the first layer clears every marking", async () => {
    const { root, app } = await mount(fake);
    const ids = johnIds as { fcs: string[] };
    app.store.replaceDoc(clone(johnBuggyDoc) as GraphDoc, {
      dirty: true,
      datasetPath: "digits.dbds",
    });
    await app.canvas.push();
    expect(root.querySelectorAll(".canvas-node.error-outline").length).toBe(1);

    app.store.localSetParam(ids.fcs[0], "flatten_input", true);
    expect(app.store.state.dirty).toBe(true);
    await app.canvas.push();

    expect(app.store.state.diagnostics.length).toBe(0);
    expect(root.querySelectorAll(".canvas-node.error-outline").length).toBe(0);
    expect(root.querySelectorAll(".terminal.stalled").length).toBe(0);
    expect(app.store.state.dirty).toBe(false);
  });

  test("a 5-epoch run plots 5 points per metric series via since_epoch polling", async () => {
    document.body.innerHTML = '<div id="app"></div>';
    const root = document.getElementById("app")!;
    const app = await mountEditor(root, { fetchFn: fake.fetch });
    // swap in a manual scheduler so the test drives each poll tick
    const { TrainingDashboard } = await import("../src/dashboard");
    const dash = new TrainingDashboard(
      document.createElement("div"),
      app.store,
      app.api,
      () => app.canvas.push(),
      manualScheduler,
    );

    app.store.replaceDoc(clone(xorDoc) as GraphDoc, { dirty: true, datasetPath: "xor.dbds" });
    const sid = await dash.start();
    expect(sid).toBe("s1");
    expect(app.store.state.sessionStatus).toBe("running");

    const cursors: number[] = [];
    for (let i = 0; i < 10 && app.store.state.sessionStatus === "running"; i++) {
      await dash.pollOnce();
      cursors.push(app.store.state.pollCursor);
    }
    expect(app.store.state.sessionStatus).toBe("finished");
    expect(app.store.state.records.map((r) => r.epoch)).toEqual([1, 2, 3, 4, 5]);
    // the poll cursor is monotone
    for (let i = 1; i < cursors.length; i++) {
      expect(cursors[i]).toBeGreaterThanOrEqual(cursors[i - 1]);
    }
    // incremental fetches: the server only ever saw the cursor frontier
    const metricCalls = fake.log.filter((l) => l.includes("/metrics"));
    expect(metricCalls.length).toBeGreaterThanOrEqual(3);

    for (const series of ["train_accuracy", "test_accuracy", "train_loss", "test_loss"]) {
      const points = dash.plotRoot.querySelectorAll(`circle.series-${series}`);
      expect(points.length).toBe(5);
    }
    expect(dash.statusBadge.dataset.status).toBe("finished");
  });

  test("clicking a stalled block shows the stall badge and no heatmap", async () => {
    const { app } = await mount(fake);
    app.store.replaceDoc(clone(xorDoc) as GraphDoc, { dirty: true, datasetPath: "xor.dbds" });
    const sid = await app.dashboard.start();
    expect(sid).toBe("s1");
    fake.stalledInspectionFor("b5");
    const inspection = await app.dashboard.inspect("b5");
    expect(inspection?.stalled).toBe(true);
    expect(app.dashboard.inspectorRoot.querySelector(".stalled-badge")).not.toBeNull();
    expect(app.dashboard.inspectorRoot.querySelector(".heatmap")).toBeNull();
  });

  test("inspecting a healthy FC renders the recorded heatmap grid", async () => {
    const { app } = await mount(fake);
    app.store.replaceDoc(clone(xorDoc) as GraphDoc, { dirty: true, datasetPath: "xor.dbds" });
    await app.dashboard.start();
    const fc1 = (await import("./fixtures/xor_ids.json")).default.fc1 as string;
    const inspection = await app.dashboard.inspect(fc1);
    expect(inspection?.status).toBe("ok");
    const grid = app.dashboard.inspectorRoot.querySelector<HTMLElement>(".heatmap");
    expect(grid).not.toBeNull();
    expect(grid!.dataset.rows).toBe("4");
    expect(grid!.dataset.cols).toBe("8");
  });

  test("training is refused while server-reported errors stand", async () => {
    const { app } = await mount(fake);
    app.store.replaceDoc(clone(johnBuggyDoc) as GraphDoc, {
      dirty: true,
      datasetPath: "digits.dbds",
    });
    const sid = await app.dashboard.start();
    expect(sid).toBeNull();
    expect(app.store.state.toast).toContain("fix validation errors");
    expect(fake.log.filter((l) => l === "POST /api/session").length).toBe(0);
  });
});
