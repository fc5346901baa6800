"""Headless driver: validate, train, evaluate, serve, generate fixture datasets.

Machine-readable output is line-delimited JSON on stdout; human text goes to
stderr. Exit codes: 0 success, 1 domain failure (diagnostics or training
error), 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import EngineError, FormatError
from .fixtures import FIXTURE_NAMES, generate_fixture
from .graph import validate
from .persistence import (
    ProjectFile,
    load_project,
    resolve_input_datasets,
    save_dataset,
)
from .training import OptimizerConfig, Session, evaluate, train


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _note(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _load(path: str) -> ProjectFile:
    return load_project(path)


def cmd_validate(args) -> int:
    project = _load(args.project)
    datasets, missing = {}, []
    try:
        datasets, missing = resolve_input_datasets(project.graph, args.project, project.dataset_path)
    except FormatError as exc:
        _note(f"dataset unavailable, structural checks only: {exc.message}")
    metas = {bid: ds.meta for bid, ds in datasets.items()}
    diags = validate(project.graph, None, metas or None)
    for d in diags:
        _emit(d.to_dict())
    if missing:
        _note(f"no dataset bound for inputs {missing}; shape checks skipped there")
    errors = [d for d in diags if d.severity == "error"]
    _note(f"{len(errors)} error(s), {len(diags) - len(errors)} warning(s)")
    return 1 if errors else 0


def _effective_config(project: ProjectFile, args) -> OptimizerConfig:
    cfg = project.optimizer
    overrides = {}
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        overrides["learning_rate"] = args.lr
    if getattr(args, "batch", None) is not None:
        overrides["batch_size"] = args.batch
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides) if overrides else cfg


def _session_for(project: ProjectFile, project_path: str, cfg: OptimizerConfig) -> Session:
    datasets, missing = resolve_input_datasets(project.graph, project_path, project.dataset_path)
    if missing:
        raise FormatError("io-error", f"no dataset bound for Input blocks {missing}")
    metas = {bid: ds.meta for bid, ds in datasets.items()}
    diags = [d for d in validate(project.graph, None, metas) if d.severity == "error"]
    if diags:
        raise EngineError(
            "validation-failed",
            f"project has {len(diags)} validation error(s)",
            detail=[d.to_dict() for d in diags],
        )
    return Session("cli", project.graph, cfg, datasets)


def cmd_train(args) -> int:
    project = _load(args.project)
    cfg = _effective_config(project, args)
    session = _session_for(project, args.project, cfg)
    _note(f"training {args.project}: {cfg.epochs} epochs, lr={cfg.learning_rate}")
    history = train(session)
    doc = {
        "config": cfg.to_dict(),
        "dataset_path": project.dataset_path,
        "status": session.status,
        "metrics": history.to_dict(),
    }
    if args.metrics_out:
        Path(args.metrics_out).write_bytes(
            json.dumps(doc, sort_keys=True, separators=(",", ":")).encode() + b"\n"
        )
    final = history.final
    summary = {
        "status": session.status,
        "epochs_completed": session.epoch,
        "train_accuracy": None if final is None else final.train_accuracy,
        "train_loss": None if final is None else final.train_loss,
        "test_accuracy": None if final is None else final.test_accuracy,
        "test_loss": None if final is None else final.test_loss,
        "metrics_out": args.metrics_out,
    }
    _emit(summary)
    if session.status == "failed":
        _emit({"error": session.failure})
        return 1
    return 0


def cmd_eval(args) -> int:
    project = _load(args.project)
    cfg = project.optimizer
    session = _session_for(project, args.project, cfg)
    loss, accuracy = evaluate(session, args.split)
    _emit({"split": args.split, "loss": loss, "accuracy": accuracy})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app()
    _note(f"serving on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _fixture_out_path(base: Path, suffix: str) -> Path:
    if not suffix:
        return base
    return base.with_name(base.stem + suffix + base.suffix)


def cmd_dataset_gen(args) -> int:
    datasets = generate_fixture(args.fixture, args.seed)
    base = Path(args.out)
    for suffix, ds in datasets.items():
        path = _fixture_out_path(base, suffix)
        save_dataset(ds, path)
        _emit(
            {
                "fixture": args.fixture,
                "path": str(path),
                "num_samples": ds.num_samples,
                "input_shape": list(ds.input_shape),
                "num_classes": ds.num_classes,
                "train_count": ds.train_count,
            }
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dagblocks", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="structural + shape diagnostics for a project")
    p.add_argument("project")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("train", help="train a project headlessly")
    p.add_argument("project")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--metrics-out", dest="metrics_out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a project on one split")
    p.add_argument("project")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP API for the visual editor")
    p.add_argument("--port", type=int, default=8640)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("dataset-gen", help="write a fixture dataset")
    p.add_argument("fixture", choices=FIXTURE_NAMES)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_dataset_gen)

    return parser


_IO_CODES = {"io-error", "bad-magic", "version-unsupported", "schema-violation",
             "length-mismatch", "weight-shape-mismatch", "pipeline-invalid",
             "label-out-of-range", "unknown-fixture"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except EngineError as exc:
        _emit({"error": exc.to_dict()})
        _note(f"error [{exc.code}]: {exc.message}")
        return 2 if exc.code in _IO_CODES else 1
    except OSError as exc:
        _note(f"io error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
