#!/usr/bin/env python3
"""Walk the image-classifier debug story headlessly.

Builds Input + five FullyConnected blocks + Output on the synthetic 8x8 digit
fixture, shows the shape diagnostic the unflattened first layer produces,
fixes it, merges the stack into a "Backbone" SuperBlock, trains, and saves
project + custom block to disk.
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

from dagblocks.fixtures import make_digits8x8
from dagblocks.graph import (
    Graph,
    add_block,
    connect,
    merge_superblock,
    save_custom_from_block,
    validate,
)
from dagblocks.persistence import save_custom_block, save_dataset, save_project
from dagblocks.training import OptimizerConfig, Session, evaluate, train

WIDTHS = [64, 64, 48, 32, 16, 10]


def build_graph(seed: int) -> tuple[Graph, dict]:
    g = Graph()
    inp = add_block(g, "Input", {"order_set": [0]}, display_name="Input")
    prev = (inp, 0)
    fcs = []
    fan_in = WIDTHS[0]
    for k, fan_out in enumerate(WIDTHS[1:]):
        fc = add_block(
            g,
            "FullyConnected",
            {"in_features": fan_in, "out_features": fan_out, "flatten_input": False},
            seed=seed + k,
            display_name=f"FC{k + 1}",
        )
        connect(g, prev, (fc, 0))
        prev = (fc, 0)
        fcs.append(fc)
        fan_in = fan_out
    out = add_block(g, "Output", display_name="Output")
    connect(g, prev, (out, 0))
    return g, {"input": inp, "fcs": fcs, "output": out}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--out", default=None, help="directory for project artifacts")
    args = parser.parse_args()

    out_dir = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="digits-"))
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset = make_digits8x8(args.seed)
    save_dataset(dataset, out_dir / "digits.dbds")
    g, ids = build_graph(args.seed)

    print("== validating the freshly wired graph ==")
    diagnostics = validate(g, dataset.meta)
    for d in diagnostics:
        marker = "RED " if d.severity == "error" else "YELLOW"
        print(f"  [{marker}] {d.code}: {d.message}")
    errors = [d for d in diagnostics if d.severity == "error"]
    assert errors, "expected the unflattened first layer to be flagged"

    print("\n== enabling flatten_input on FC1 ==")
    g.blocks[ids["fcs"][0]].params["flatten_input"] = True
    diagnostics = validate(g, dataset.meta)
    print(f"  diagnostics now: {len(diagnostics)}")

    backbone = merge_superblock(g, ids["fcs"], "Backbone")
    print(f"\n== merged the five layers into SuperBlock {backbone} ('Backbone') ==")

    cfg = OptimizerConfig(
        learning_rate=0.05, momentum=0.9, batch_size=32, epochs=args.epochs, seed=args.seed
    )
    session = Session("demo", g, cfg, {ids["input"]: dataset})
    history = train(session)
    final = history.final
    print(f"  epoch {final.epoch}: train_acc={final.train_accuracy:.3f} "
          f"test_acc={final.test_accuracy:.3f}")
    loss, acc = evaluate(session, "test")
    print(f"  held-out: loss={loss:.4f} accuracy={acc:.3f}")

    save_project(session.graph, cfg, out_dir / "digits.dbproj", dataset_path="digits.dbds")
    defn = save_custom_from_block(session.graph, backbone)
    save_custom_block(defn, out_dir / "backbone.dbblk")
    (out_dir / "metrics.json").write_text(json.dumps(history.to_dict(), indent=2))
    print(f"\nartifacts in {out_dir}")
    return 0 if acc >= 0.9 else 1


if __name__ == "__main__":
    sys.exit(main())
