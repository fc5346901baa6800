#!/usr/bin/env python3
"""Record real HTTP payloads from the engine for the frontend test suite.

Boots the API in-process, drives the editor workflows (buggy five-FC build,
flatten fix, merge, XOR training, inspection), and writes every response the
frontend tests need to frontend/tests/fixtures/. Keeps the editor tests
pinned to the real wire format without a live Python server in CI.
"""

import json
import sys
import time
from pathlib import Path

from fastapi.testclient import TestClient

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from dagblocks.fixtures import make_digits8x8, make_xor
from dagblocks.graph import Graph, add_block, connect, merge_superblock
from dagblocks.persistence import graph_to_doc, save_dataset
from dagblocks.service import ServerState, create_app

OUT_DIR = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"


def build_john_doc():
    widths = [64, 64, 48, 32, 16, 10]
    g = Graph()
    inp = add_block(g, "Input", {"order_set": [0]}, display_name="Input")
    prev = (inp, 0)
    fcs = []
    fan_in = widths[0]
    for k, fan_out in enumerate(widths[1:]):
        fc = add_block(
            g,
            "FullyConnected",
            {"in_features": fan_in, "out_features": fan_out, "flatten_input": False},
            seed=k,
            display_name=f"FC{k + 1}",
        )
        connect(g, prev, (fc, 0))
        prev = (fc, 0)
        fcs.append(fc)
        fan_in = fan_out
    out = add_block(g, "Output", display_name="Output")
    connect(g, prev, (out, 0))
    return graph_to_doc(g), {"input": inp, "fcs": fcs, "output": out}


def build_xor_doc():
    g = Graph()
    inp = add_block(g, "Input", {"order_set": [0]}, display_name="Input")
    f1 = add_block(g, "FullyConnected", {"in_features": 2, "out_features": 8}, seed=7,
                   display_name="Hidden")
    act = add_block(g, "Activation", {"fn": "tanh"}, display_name="Tanh")
    f2 = add_block(g, "FullyConnected", {"in_features": 8, "out_features": 2}, seed=8,
                   display_name="Logits")
    out = add_block(g, "Output", display_name="Output")
    for s, d in zip((inp, f1, act, f2), (f1, act, f2, out)):
        connect(g, (s, 0), (d, 0))
    return graph_to_doc(g), {"input": inp, "fc1": f1, "output": out}


def build_stall_doc():
    # valid statically, ambiguous at runtime: LogicalOr fed two live inputs
    g = Graph()
    inp = add_block(g, "Input", {"order_set": [0]}, display_name="Input")
    cp = add_block(g, "Copy", {"fanout": 2}, display_name="Copy")
    orr = add_block(g, "LogicalOr", display_name="Or")
    f = add_block(g, "FullyConnected", {"in_features": 2, "out_features": 2}, seed=1,
                  display_name="FC")
    out = add_block(g, "Output", display_name="Output")
    connect(g, (inp, 0), (cp, 0))
    connect(g, (cp, 0), (orr, 0))
    connect(g, (cp, 1), (orr, 1))
    connect(g, (orr, 0), (f, 0))
    connect(g, (f, 0), (out, 0))
    return graph_to_doc(g), {"or": orr, "fc": f, "output": out}


def wait_status(client, sid, wanted, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        view = client.get(f"/api/session/{sid}").json()
        if view["status"] in wanted:
            return view
        time.sleep(0.02)
    raise RuntimeError(f"session stuck, wanted {wanted}")


def main() -> int:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    workdir = OUT_DIR / "_server"
    workdir.mkdir(exist_ok=True)
    save_dataset(make_digits8x8(0), workdir / "digits.dbds")
    save_dataset(make_xor(), workdir / "xor.dbds")

    fixtures: dict[str, object] = {}
    state = ServerState(base_dir=workdir)
    with TestClient(create_app(state)) as client:
        fixtures["catalog"] = client.get("/api/blocks").json()
        resp = client.post(
            "/api/blocks/custom",
            json={
                "name": "GRL",
                "pipeline": [{"kind_id": "Identity", "params": {}}],
                "backward_transform": {"variant": "negate"},
            },
        )
        assert resp.status_code == 200, resp.text
        fixtures["catalog_with_custom"] = client.get("/api/blocks").json()

        # the buggy five-FC build and its diagnostics
        john_doc, john_ids = build_john_doc()
        fixtures["john_ids"] = john_ids
        fixtures["john_buggy_doc"] = john_doc
        r = client.put("/api/graph", json={"graph": john_doc, "dataset_path": "digits.dbds"})
        assert r.status_code == 200, r.text
        fixtures["john_put_response"] = r.json()
        fixtures["validate_buggy"] = client.post("/api/graph/validate").json()

        fixed_doc = json.loads(json.dumps(john_doc))
        for entry in fixed_doc["blocks"]:
            if entry["block_id"] == john_ids["fcs"][0]:
                entry["params"]["flatten_input"] = True
        fixtures["john_fixed_doc"] = fixed_doc
        r = client.put("/api/graph", json={"graph": fixed_doc, "dataset_path": "digits.dbds"})
        assert r.status_code == 200
        fixtures["validate_fixed"] = client.post("/api/graph/validate").json()

        # merge the five FC nodes into a SuperBlock
        r = client.post("/api/graph/merge", json={"block_ids": john_ids["fcs"], "name": "Backbone"})
        assert r.status_code == 200, r.text
        fixtures["merge_response"] = r.json()

        # a rejected connect attempt: the editor pushes a cyclic document
        cyclic = json.loads(json.dumps(fixed_doc))
        cyclic["connections"].append(
            {"src": [john_ids["fcs"][1], 0], "dst": [john_ids["fcs"][0], 0]}
        )
        r = client.put("/api/graph", json={"graph": cyclic, "dataset_path": "digits.dbds"})
        assert r.status_code == 422
        fixtures["put_cycle_rejection"] = {"status": r.status_code, "body": r.json()}

        # saving a branching SuperBlock as a custom block is rejected
        branchy = Graph()
        b_in = add_block(branchy, "Input", {"order_set": [0]})
        b_cp = add_block(branchy, "Copy", {"fanout": 2})
        b_a = add_block(branchy, "Identity")
        b_b = add_block(branchy, "Identity")
        connect(branchy, (b_in, 0), (b_cp, 0))
        connect(branchy, (b_cp, 0), (b_a, 0))
        connect(branchy, (b_cp, 1), (b_b, 0))
        b_sb = merge_superblock(branchy, [b_cp, b_a, b_b], "Branchy")
        r = client.put("/api/graph", json={"graph": graph_to_doc(branchy), "dataset_path": None})
        assert r.status_code == 200, r.text
        r = client.post("/api/graph/save-custom", json={"block_id": b_sb})
        assert r.status_code == 422
        fixtures["save_custom_rejection"] = {
            "status": r.status_code,
            "body": r.json(),
            "block_id": b_sb,
            "graph": graph_to_doc(branchy),
        }

        # XOR training: 5 epochs, metrics + status + inspection payloads
        xor_doc, xor_ids = build_xor_doc()
        fixtures["xor_ids"] = xor_ids
        fixtures["xor_doc"] = xor_doc
        r = client.put(
            "/api/graph",
            json={
                "graph": xor_doc,
                "dataset_path": "xor.dbds",
                "optimizer": {"learning_rate": 0.5, "momentum": 0.9, "batch_size": 4,
                              "epochs": 5, "seed": 7},
            },
        )
        assert r.status_code == 200
        sid = client.post("/api/session", json={}).json()["session_id"]
        fixtures["session_created"] = {"session_id": sid, "status": "idle"}
        client.post(f"/api/session/{sid}/train")
        wait_status(client, sid, {"finished"})
        fixtures["session_finished"] = client.get(f"/api/session/{sid}").json()
        fixtures["metrics_full"] = client.get(
            f"/api/session/{sid}/metrics", params={"since_epoch": 0}
        ).json()
        fixtures["metrics_since_3"] = client.get(
            f"/api/session/{sid}/metrics", params={"since_epoch": 3}
        ).json()
        fixtures["inspect_fc"] = client.get(
            f"/api/session/{sid}/block/{xor_ids['fc1']}"
        ).json()

        # a stalled block inspection from the runtime-ambiguous OR graph
        stall_doc, stall_ids = build_stall_doc()
        r = client.put("/api/graph", json={"graph": stall_doc, "dataset_path": "xor.dbds"})
        assert r.status_code == 200
        sid2 = client.post("/api/session", json={}).json()["session_id"]
        client.post(f"/api/session/{sid2}/train")
        wait_status(client, sid2, {"finished", "failed"})
        fixtures["inspect_stalled"] = client.get(
            f"/api/session/{sid2}/block/{stall_ids['output']}"
        ).json()
        fixtures["inspect_failed"] = client.get(
            f"/api/session/{sid2}/block/{stall_ids['or']}"
        ).json()

    for name, payload in fixtures.items():
        (OUT_DIR / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(f"wrote {len(fixtures)} fixtures to {OUT_DIR}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
