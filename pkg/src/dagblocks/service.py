"""HTTP+JSON boundary the visual editor drives.

The server holds one project document (graph + optimizer + dataset path) and
a set of training sessions. Graph mutations are whole-document PUTs and are
rejected with 409 while any session is training; metric and inspection reads
are snapshot-based so they are safe to poll while training runs. Every engine
error surfaces as a structured body with its engine code.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .errors import (
    CompileError,
    ConnectError,
    EngineError,
    ExecutionError,
    FormatError,
    GraphError,
    RegistryError,
    SessionError,
    ShapeError,
    TapeError,
)
from .executor import inspect_block
from .graph import (
    Graph,
    expand_superblock,
    merge_superblock,
    save_custom_from_block,
    validate,
)
from .persistence import (
    collect_weights,
    custom_def_from_doc,
    graph_from_doc,
    graph_to_doc,
    resolve_input_datasets,
)
from .registry import BlockRegistry
from .training import OptimizerConfig, Session, stop, train

_STATUS_BY_CODE = {
    "unknown-session": 404,
    "unknown-block": 404,
    "unknown-kind": 404,
    "no-step": 409,
    "not-running": 409,
    "already-running": 409,
    "training-active": 409,
    "io-error": 400,
}

_STATUS_BY_TYPE = [
    (SessionError, 409),
    (ExecutionError, 422),
    (FormatError, 422),
    (RegistryError, 422),
    (ConnectError, 422),
    (GraphError, 422),
    (CompileError, 422),
    (ShapeError, 422),
    (TapeError, 422),
]


def _http_status(exc: EngineError) -> int:
    if exc.code in _STATUS_BY_CODE:
        return _STATUS_BY_CODE[exc.code]
    for etype, status in _STATUS_BY_TYPE:
        if isinstance(exc, etype):
            return status
    return 422


class ServerState:
    def __init__(self, base_dir: str | Path | None = None):
        self.lock = threading.RLock()
        self.registry = BlockRegistry()
        self.graph = Graph(self.registry)
        self.optimizer = OptimizerConfig()
        self.dataset_path: str | None = None
        self.base_dir = Path(base_dir) if base_dir else Path.cwd()
        self.sessions: dict[str, Session] = {}
        self.threads: dict[str, threading.Thread] = {}
        self._next_session = 1

    def training_active(self) -> bool:
        return any(s.status_view()["status"] == "running" for s in self.sessions.values())

    def require_idle(self) -> None:
        if self.training_active():
            raise SessionError(
                "training-active", "graph mutations are rejected while a session is training"
            )

    def get_session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise SessionError("unknown-session", f"no session {session_id!r}")
        return session

    def project_document(self) -> dict:
        return {
            "graph": graph_to_doc(self.graph),
            "optimizer": self.optimizer.to_dict(),
            "dataset_path": self.dataset_path,
        }

    def datasets(self):
        anchor = self.base_dir / "project"
        return resolve_input_datasets(self.graph, anchor, self.dataset_path)


def _carry_over_state(old: Graph, new: Graph) -> None:
    """Keep trained weights for blocks whose identity and shapes survived the edit."""
    old_weights = collect_weights(old)

    def walk(graph: Graph):
        for bid, inst in graph.blocks.items():
            for key, tensor in inst.state.items():
                prev = old_weights.get(f"block/{bid}/{key}")
                if prev is not None and prev.shape == tensor.shape:
                    tensor.data[...] = prev.data
        for body in graph.superblocks.values():
            walk(body.graph)

    walk(new)


def create_app(state: ServerState | None = None) -> FastAPI:
    app = FastAPI(title="dagblocks", docs_url=None, redoc_url=None)
    st = state or ServerState()
    app.state.engine = st

    @app.exception_handler(EngineError)
    async def engine_error_handler(_request: Request, exc: EngineError):
        return JSONResponse(status_code=_http_status(exc), content={"error": exc.to_dict()})

    @app.exception_handler(Exception)
    async def unexpected_handler(_request: Request, exc: Exception):
        return JSONResponse(
            status_code=500,
            content={"error": {"code": "internal", "message": str(exc)}},
        )

    # -- catalog -------------------------------------------------------------

    @app.get("/api/blocks")
    def catalog() -> dict:
        with st.lock:
            return {"blocks": st.registry.catalog()}

    @app.post("/api/blocks/custom")
    def register_custom(body: dict) -> dict:
        with st.lock:
            st.require_idle()
            defn = custom_def_from_doc(body, st.registry, {}, "")
            kind = st.registry.register_custom(defn)
            return {"kind": kind.describe()}

    # -- graph document ------------------------------------------------------

    @app.get("/api/graph")
    def get_graph() -> dict:
        with st.lock:
            return st.project_document()

    @app.put("/api/graph")
    def put_graph(body: dict) -> dict:
        with st.lock:
            st.require_idle()
            if not isinstance(body, dict) or "graph" not in body:
                raise FormatError("schema-violation", "body must carry a 'graph' document")
            seed = body.get("seed", 0)
            if not isinstance(seed, int) or isinstance(seed, bool):
                raise FormatError("schema-violation", "seed must be an integer")
            new_graph = graph_from_doc(body["graph"], st.registry, weights=None, seed=seed)
            _carry_over_state(st.graph, new_graph)
            st.graph = new_graph
            if "optimizer" in body and body["optimizer"] is not None:
                try:
                    st.optimizer = OptimizerConfig.from_dict(body["optimizer"])
                except (TypeError, ValueError) as exc:
                    raise FormatError("schema-violation", f"optimizer: {exc}") from None
            if "dataset_path" in body:
                dp = body["dataset_path"]
                if dp is not None and not isinstance(dp, str):
                    raise FormatError("schema-violation", "dataset_path must be a string or null")
                st.dataset_path = dp
            return st.project_document()

    @app.post("/api/graph/validate")
    def validate_graph() -> dict:
        with st.lock:
            warnings = []
            metas = {}
            try:
                datasets, missing = st.datasets()
                metas = {bid: ds.meta for bid, ds in datasets.items()}
                if missing:
                    warnings.append(
                        {
                            "severity": "warning",
                            "code": "no-dataset",
                            "message": f"no dataset bound for inputs {missing}; "
                            "shape checks skipped there",
                            "target": None,
                            "path": [],
                        }
                    )
            except FormatError as exc:
                warnings.append(
                    {
                        "severity": "warning",
                        "code": "no-dataset",
                        "message": f"dataset unavailable: {exc.message}",
                        "target": None,
                        "path": [],
                    }
                )
            diags = validate(st.graph, None, metas or None)
            return {"diagnostics": [d.to_dict() for d in diags] + warnings}

    @app.post("/api/graph/merge")
    def merge(body: dict) -> dict:
        with st.lock:
            st.require_idle()
            block_ids = body.get("block_ids")
            name = body.get("name", "SuperBlock")
            if not isinstance(block_ids, list) or not all(isinstance(b, str) for b in block_ids):
                raise FormatError("schema-violation", "block_ids must be a list of strings")
            new_id = merge_superblock(st.graph, block_ids, name)
            doc = st.project_document()
            doc["superblock_id"] = new_id
            return doc

    @app.post("/api/graph/expand")
    def expand(body: dict) -> dict:
        with st.lock:
            st.require_idle()
            block_id = body.get("block_id")
            if not isinstance(block_id, str):
                raise FormatError("schema-violation", "block_id must be a string")
            expand_superblock(st.graph, block_id)
            return st.project_document()

    @app.post("/api/graph/save-custom")
    def save_custom(body: dict) -> dict:
        """Capture a block as a reusable custom kind and register it."""
        with st.lock:
            block_id = body.get("block_id")
            if not isinstance(block_id, str):
                raise FormatError("schema-violation", "block_id must be a string")
            name = body.get("name")
            if name is not None and not isinstance(name, str):
                raise FormatError("schema-violation", "name must be a string")
            defn = save_custom_from_block(st.graph, block_id, name)
            kind = st.registry.register_custom(defn)
            return {"kind": kind.describe()}

    # -- sessions ------------------------------------------------------------

    @app.post("/api/session")
    def create_session(body: dict | None = None) -> dict:
        body = body or {}
        with st.lock:
            cfg = st.optimizer
            if body.get("optimizer"):
                try:
                    cfg = OptimizerConfig.from_dict({**cfg.to_dict(), **body["optimizer"]})
                except (TypeError, ValueError) as exc:
                    raise FormatError("schema-violation", f"optimizer: {exc}") from None
            datasets, missing = st.datasets()
            if missing:
                raise FormatError(
                    "schema-violation", f"no dataset bound for Input blocks {missing}"
                )
            metas = {bid: ds.meta for bid, ds in datasets.items()}
            diags = [d for d in validate(st.graph, None, metas) if d.severity == "error"]
            if diags:
                raise EngineError(
                    "validation-failed",
                    f"project has {len(diags)} validation error(s)",
                    detail=[d.to_dict() for d in diags],
                )
            session_id = f"s{st._next_session}"
            st._next_session += 1
            session = Session(session_id, st.graph, cfg, datasets)
            st.sessions[session_id] = session
            return {"session_id": session_id, "status": session.status}

    @app.post("/api/session/{session_id}/train")
    def start_training(session_id: str) -> dict:
        with st.lock:
            session = st.get_session(session_id)
            if session.status_view()["status"] == "running":
                raise SessionError("already-running", "session is already training")
            worker = threading.Thread(target=train, args=(session,), daemon=True)
            st.threads[session_id] = worker
            worker.start()
        return {"session_id": session_id, "status": "running"}

    @app.post("/api/session/{session_id}/stop")
    def stop_training(session_id: str) -> dict:
        session = st.get_session(session_id)
        stop(session)
        thread = st.threads.get(session_id)
        if thread is not None:
            thread.join(timeout=30)
        return session.status_view()

    @app.get("/api/session/{session_id}")
    def session_status(session_id: str) -> dict:
        return st.get_session(session_id).status_view()

    @app.get("/api/session/{session_id}/metrics")
    def session_metrics(session_id: str, since_epoch: int = 0) -> dict:
        session = st.get_session(session_id)
        records = session.metrics_since(since_epoch)
        view = session.status_view()
        return {
            "session_id": session_id,
            "status": view["status"],
            "records": [r.to_dict() for r in records],
        }

    @app.get("/api/session/{session_id}/block/{block_id}")
    def session_inspect(session_id: str, block_id: str) -> dict:
        session = st.get_session(session_id)
        report = session.report_view()
        if report is None:
            raise SessionError("no-step", "no step has executed yet")
        return inspect_block(report, block_id).to_dict()

    return app
