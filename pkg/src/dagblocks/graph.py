"""The architecture graph: blocks, connections, SuperBlock nesting, validation.

Connections run output terminal -> input terminal with fan-in 1 per input and
unlimited fan-out per output. SuperBlocks hold a nested graph plus boundary
maps; execution always works on the flattened form, so merging is
execution-transparent. Validation produces :class:`Diagnostic` findings that
the editor renders as red block contours and yellow stalled terminals.
"""

from __future__ import annotations

import copy
import heapq
from dataclasses import dataclass

from .errors import ConnectError, GraphError, ShapeError
from .registry import (
    SUPERBLOCK_KIND,
    BatchDim,
    BlockRegistry,
    CustomBlockDef,
    _derive_example_shape,
    infer_output_shape,
    init_learnable_state,
    shape_to_json,
)
from .tensor import BackwardTransform, Tensor


@dataclass
class BlockInstance:
    block_id: str
    kind_id: str
    params: dict
    state: dict[str, Tensor]
    display_name: str
    position: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True, order=True)
class Endpoint:
    block: str
    port: int


@dataclass(frozen=True, order=True)
class Connection:
    src: Endpoint
    dst: Endpoint


@dataclass(frozen=True)
class BlockTarget:
    block_id: str

    def to_dict(self):
        return {"kind": "block", "block_id": self.block_id}


@dataclass(frozen=True)
class TerminalTarget:
    block_id: str
    direction: str  # "in" | "out"
    index: int

    def to_dict(self):
        return {
            "kind": "terminal",
            "block_id": self.block_id,
            "direction": self.direction,
            "index": self.index,
        }


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    message: str
    target: BlockTarget | TerminalTarget | None
    path: tuple[str, ...] = ()  # enclosing SuperBlock ids, outermost first

    def to_dict(self):
        return {
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
            "target": None if self.target is None else self.target.to_dict(),
            "path": list(self.path),
        }


@dataclass
class SuperBlockBody:
    graph: "Graph"
    boundary_in: list[tuple[str, int]]  # inner (block_id, input index), sorted
    boundary_out: list[tuple[str, int]]  # inner (block_id, output index), sorted


@dataclass
class DatasetMeta:
    """Per-sample shape and label arity a dataset provides."""

    input_shape: tuple[int, ...]
    num_classes: int


class Graph:
    def __init__(self, registry: BlockRegistry | None = None):
        self.registry = registry or BlockRegistry()
        self.blocks: dict[str, BlockInstance] = {}
        self.connections: list[Connection] = []
        self.superblocks: dict[str, SuperBlockBody] = {}
        self.next_id = 1

    # -- terminal signatures -------------------------------------------------

    def _instance(self, block_id: str) -> BlockInstance:
        inst = self.blocks.get(block_id)
        if inst is None:
            raise GraphError("unknown-block", f"no block with id {block_id!r}")
        return inst

    def input_arity(self, block_id: str) -> int:
        inst = self._instance(block_id)
        if block_id in self.superblocks:
            return len(self.superblocks[block_id].boundary_in)
        kind = self.registry.get(inst.kind_id)
        return len(kind.input_terminals(inst.params))

    def output_arity(self, block_id: str) -> int:
        inst = self._instance(block_id)
        if block_id in self.superblocks:
            return len(self.superblocks[block_id].boundary_out)
        kind = self.registry.get(inst.kind_id)
        return len(kind.output_terminals(inst.params))

    def snapshot(self) -> "Graph":
        """Deep copy of structure and weights; the registry is shared."""
        g = Graph(self.registry)
        g.next_id = self.next_id
        g.connections = list(self.connections)
        for bid, inst in self.blocks.items():
            g.blocks[bid] = BlockInstance(
                block_id=inst.block_id,
                kind_id=inst.kind_id,
                params=copy.deepcopy(inst.params),
                state={k: t.copy() for k, t in inst.state.items()},
                display_name=inst.display_name,
                position=inst.position,
            )
        for bid, body in self.superblocks.items():
            g.superblocks[bid] = SuperBlockBody(
                graph=body.graph.snapshot(),
                boundary_in=list(body.boundary_in),
                boundary_out=list(body.boundary_out),
            )
        return g


@dataclass
class FlatGraph:
    """A graph with every SuperBlock spliced inline."""

    blocks: dict[str, BlockInstance]
    connections: list[Connection]
    paths: dict[str, tuple[str, ...]]  # block id -> enclosing SuperBlock chain

    def incoming(self) -> dict[tuple[str, int], Endpoint]:
        return {(c.dst.block, c.dst.port): c.src for c in self.connections}

    def successors(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {bid: [] for bid in self.blocks}
        for c in self.connections:
            out[c.src.block].append(c.dst.block)
        return out


def _resolve(graph: Graph, block: str, port: int, direction: str) -> tuple[str, int]:
    if block not in graph.superblocks:
        return block, port
    body = graph.superblocks[block]
    boundary = body.boundary_in if direction == "in" else body.boundary_out
    inner_block, inner_port = boundary[port]
    return _resolve(body.graph, inner_block, inner_port, direction)


def flatten_graph(g: Graph) -> FlatGraph:
    blocks: dict[str, BlockInstance] = {}
    connections: list[Connection] = []
    paths: dict[str, tuple[str, ...]] = {}

    def walk(graph: Graph, prefix: tuple[str, ...]):
        for bid, inst in graph.blocks.items():
            if bid in graph.superblocks:
                walk(graph.superblocks[bid].graph, prefix + (bid,))
            else:
                blocks[bid] = inst
                paths[bid] = prefix
        for c in graph.connections:
            src = _resolve(graph, c.src.block, c.src.port, "out")
            dst = _resolve(graph, c.dst.block, c.dst.port, "in")
            connections.append(Connection(Endpoint(*src), Endpoint(*dst)))

    walk(g, ())
    return FlatGraph(blocks, connections, paths)


def _reachable(adj: dict[str, list[str]], start: str) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        for nxt in adj.get(stack.pop(), []):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def _find_cycle_blocks(flat: FlatGraph) -> set[str]:
    """Ids of blocks on some cycle (non-empty iff the flattened graph is cyclic)."""
    indeg = {bid: 0 for bid in flat.blocks}
    succ = flat.successors()
    for c in flat.connections:
        indeg[c.dst.block] += 1
    queue = [b for b, d in indeg.items() if d == 0]
    removed = set()
    while queue:
        b = queue.pop()
        removed.add(b)
        for nxt in succ[b]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    return set(flat.blocks) - removed


# ---------------------------------------------------------------------------
# editing operations


def add_block(
    g: Graph,
    kind_id: str,
    params: dict | None = None,
    seed: int = 0,
    display_name: str | None = None,
    position: tuple[float, float] = (0.0, 0.0),
) -> str:
    kind = g.registry.get(kind_id)
    validated = kind.validate_params(params)
    block_id = f"b{g.next_id}"
    g.next_id += 1
    state = init_learnable_state(kind, validated, seed) if kind.learnable else {}
    g.blocks[block_id] = BlockInstance(
        block_id=block_id,
        kind_id=kind_id,
        params=validated,
        state=state,
        display_name=display_name or kind_id,
        position=(float(position[0]), float(position[1])),
    )
    return block_id


def connect(g: Graph, src: tuple[str, int], dst: tuple[str, int]) -> Connection:
    src_ep, dst_ep = Endpoint(*src), Endpoint(*dst)
    for ep, direction, arity_fn in (
        (src_ep, "output", g.output_arity),
        (dst_ep, "input", g.input_arity),
    ):
        if ep.block not in g.blocks:
            raise ConnectError("dangling-endpoint", f"no block with id {ep.block!r}")
        arity = arity_fn(ep.block)
        if not 0 <= ep.port < arity:
            raise ConnectError(
                "dangling-endpoint",
                f"{ep.block} has {arity} {direction} terminals, index {ep.port} is invalid",
            )
    if any(c.dst == dst_ep for c in g.connections):
        raise ConnectError(
            "input-occupied",
            f"input terminal {dst_ep.block}[{dst_ep.port}] already has a connection",
        )
    candidate = Connection(src_ep, dst_ep)
    flat = flatten_graph(g)
    fsrc = _resolve(g, src_ep.block, src_ep.port, "out")
    fdst = _resolve(g, dst_ep.block, dst_ep.port, "in")
    adj = flat.successors()
    if fsrc[0] in _reachable(adj, fdst[0]):
        raise ConnectError(
            "would-create-cycle",
            f"connecting {src_ep.block} -> {dst_ep.block} would create a cycle",
        )
    g.connections.append(candidate)
    return candidate


def disconnect(g: Graph, dst: tuple[str, int]) -> None:
    dst_ep = Endpoint(*dst)
    before = len(g.connections)
    g.connections = [c for c in g.connections if c.dst != dst_ep]
    if len(g.connections) == before:
        raise ConnectError(
            "dangling-endpoint", f"no connection into {dst_ep.block}[{dst_ep.port}]"
        )


def rename_block(g: Graph, block_id: str, name: str) -> None:
    inst = g._instance(block_id)
    if not name or not name.strip():
        raise GraphError("invalid-name", "display name cannot be empty")
    inst.display_name = name


def merge_superblock(g: Graph, block_ids, name: str) -> str:
    selection = sorted(set(block_ids))
    if not selection:
        raise GraphError("empty-selection", "cannot merge an empty selection")
    for bid in selection:
        g._instance(bid)
    sel = set(selection)

    # undirected connectivity over the induced subgraph
    if len(selection) > 1:
        neigh: dict[str, set[str]] = {b: set() for b in selection}
        for c in g.connections:
            if c.src.block in sel and c.dst.block in sel:
                neigh[c.src.block].add(c.dst.block)
                neigh[c.dst.block].add(c.src.block)
        seen = {selection[0]}
        stack = [selection[0]]
        while stack:
            for nxt in neigh[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if seen != sel:
            raise GraphError(
                "disconnected-selection",
                "selected blocks must form a connected subgraph",
            )

    internal = [c for c in g.connections if c.src.block in sel and c.dst.block in sel]
    incoming = [c for c in g.connections if c.src.block not in sel and c.dst.block in sel]
    outgoing = [c for c in g.connections if c.src.block in sel and c.dst.block not in sel]

    # cut connections become boundary terminals, ordered by (block_id, port)
    boundary_in = sorted({(c.dst.block, c.dst.port) for c in incoming})
    boundary_out = sorted({(c.src.block, c.src.port) for c in outgoing})

    sub = Graph(g.registry)
    for bid in selection:
        sub.blocks[bid] = g.blocks.pop(bid)
        if bid in g.superblocks:
            sub.superblocks[bid] = g.superblocks.pop(bid)
    sub.connections = internal

    new_id = f"b{g.next_id}"
    g.next_id += 1
    g.blocks[new_id] = BlockInstance(
        block_id=new_id,
        kind_id=SUPERBLOCK_KIND,
        params={},
        state={},
        display_name=name or "SuperBlock",
    )
    g.superblocks[new_id] = SuperBlockBody(sub, boundary_in, boundary_out)

    kept = [c for c in g.connections if c not in internal + incoming + outgoing]
    for c in incoming:
        port = boundary_in.index((c.dst.block, c.dst.port))
        kept.append(Connection(c.src, Endpoint(new_id, port)))
    for c in outgoing:
        port = boundary_out.index((c.src.block, c.src.port))
        kept.append(Connection(Endpoint(new_id, port), c.dst))
    g.connections = kept
    return new_id


def expand_superblock(g: Graph, block_id: str) -> None:
    if block_id not in g.superblocks:
        g._instance(block_id)
        raise GraphError("not-a-superblock", f"{block_id} is not a SuperBlock")
    body = g.superblocks.pop(block_id)
    del g.blocks[block_id]
    g.blocks.update(body.graph.blocks)
    g.superblocks.update(body.graph.superblocks)
    rewired: list[Connection] = []
    for c in g.connections:
        src, dst = c.src, c.dst
        if src.block == block_id:
            src = Endpoint(*body.boundary_out[src.port])
        if dst.block == block_id:
            dst = Endpoint(*body.boundary_in[dst.port])
        rewired.append(Connection(src, dst))
    g.connections = rewired + body.graph.connections


def save_custom_from_block(g: Graph, block_id: str, name: str | None = None) -> CustomBlockDef:
    """Capture a chain-shaped SuperBlock (or a stateful primitive) as a reusable def."""
    inst = g._instance(block_id)
    if block_id in g.superblocks:
        body = g.superblocks[block_id]
        chain = _linearize(body)
        pipeline = []
        weights: dict[str, Tensor] = {}
        for i, inner in enumerate(chain):
            pipeline.append((inner.kind_id, copy.deepcopy(inner.params)))
            for key, t in inner.state.items():
                weights[f"{i}.{key}"] = t.copy()
    elif inst.state:
        pipeline = [(inst.kind_id, copy.deepcopy(inst.params))]
        weights = {f"0.{key}": t.copy() for key, t in inst.state.items()}
    else:
        raise GraphError(
            "not-savable",
            f"{block_id} is neither a SuperBlock nor a primitive with learnable state",
        )
    first_kind = g.registry.get(pipeline[0][0])
    return CustomBlockDef(
        name=name or inst.display_name,
        pipeline=pipeline,
        backward_transform=BackwardTransform("identity"),
        saved_weights=weights or None,
        example_input_shape=_derive_example_shape(first_kind, pipeline[0][1]),
    )


def _linearize(body: SuperBlockBody) -> list[BlockInstance]:
    sub = body.graph
    if sub.superblocks:
        raise GraphError(
            "non-linear-superblock", "nested SuperBlocks cannot be saved as a pipeline"
        )
    for bid in sub.blocks:
        kind = sub.registry.get(sub.blocks[bid].kind_id)
        if len(kind.input_terminals(sub.blocks[bid].params)) != 1 or len(
            kind.output_terminals(sub.blocks[bid].params)
        ) != 1:
            raise GraphError(
                "non-linear-superblock",
                f"{bid} is not single-input single-output; only chains can be saved",
            )
    indeg = {bid: 0 for bid in sub.blocks}
    succ: dict[str, list[str]] = {bid: [] for bid in sub.blocks}
    for c in sub.connections:
        indeg[c.dst.block] += 1
        succ[c.src.block].append(c.dst.block)
    heads = [b for b, d in indeg.items() if d == 0]
    if len(heads) != 1 or any(len(s) > 1 for s in succ.values()):
        raise GraphError(
            "non-linear-superblock", "SuperBlock body must be a single chain to be saved"
        )
    chain = [heads[0]]
    while succ[chain[-1]]:
        chain.append(succ[chain[-1]][0])
    if len(chain) != len(sub.blocks):
        raise GraphError(
            "non-linear-superblock", "SuperBlock body must be a single chain to be saved"
        )
    return [sub.blocks[b] for b in chain]


# ---------------------------------------------------------------------------
# validation


def validate(
    g: Graph,
    dataset_meta: DatasetMeta | None = None,
    per_input_meta: dict[str, DatasetMeta] | None = None,
) -> list[Diagnostic]:
    """Structural checks plus static shape propagation; pure, deterministic."""
    flat = flatten_graph(g)
    diags: list[Diagnostic] = []

    def block_diag(severity, code, message, bid):
        diags.append(Diagnostic(severity, code, message, BlockTarget(bid), flat.paths.get(bid, ())))

    input_ids = [b for b, i in flat.blocks.items() if i.kind_id == "Input"]
    output_ids = [b for b, i in flat.blocks.items() if i.kind_id == "Output"]
    if not input_ids:
        diags.append(Diagnostic("error", "no-input", "graph has no Input block", None))
    if not output_ids:
        diags.append(Diagnostic("error", "no-output", "graph has no Output block", None))

    incoming = flat.incoming()
    registry = g.registry
    arities: dict[str, tuple[int, int]] = {}
    for bid, inst in flat.blocks.items():
        kind = registry.get(inst.kind_id)
        arities[bid] = (
            len(kind.input_terminals(inst.params)),
            len(kind.output_terminals(inst.params)),
        )
        for port in range(arities[bid][0]):
            if (bid, port) not in incoming:
                diags.append(
                    Diagnostic(
                        "error",
                        "dangling-input",
                        f"input terminal {port} of {bid} ({inst.display_name}) is not connected",
                        TerminalTarget(bid, "in", port),
                        flat.paths.get(bid, ()),
                    )
                )

    cyclic = _find_cycle_blocks(flat)
    if cyclic:
        block_diag("error", "cycle", "graph contains a cycle", min(cyclic))

    if input_ids and output_ids and not cyclic:
        succ = flat.successors()
        reachable = set()
        for bid in input_ids:
            reachable |= _reachable(succ, bid)
        for bid in sorted(output_ids):
            if bid not in reachable:
                block_diag(
                    "error",
                    "unreachable-output",
                    f"Output block {bid} is not reachable from any Input",
                    bid,
                )

    if not cyclic:
        diags.extend(_propagate_shapes(g, flat, incoming, arities, dataset_meta, per_input_meta))

    severity_rank = {"error": 0, "warning": 1}
    diags.sort(key=lambda d: (severity_rank[d.severity], d.code, repr(d.target)))
    return diags


def _propagate_shapes(g, flat, incoming, arities, dataset_meta, per_input_meta) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    indeg = {bid: 0 for bid in flat.blocks}
    succ = flat.successors()
    for c in flat.connections:
        indeg[c.dst.block] += 1
    ready = [b for b, d in indeg.items() if d == 0]
    heapq.heapify(ready)

    shapes: dict[tuple[str, int], tuple | None] = {}
    stalled_out: dict[str, bool] = {}

    order = []
    while ready:
        bid = heapq.heappop(ready)
        order.append(bid)
        for nxt in succ[bid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, nxt)

    for bid in order:
        inst = flat.blocks[bid]
        kind = g.registry.get(inst.kind_id)
        n_in, n_out = arities[bid]
        if inst.kind_id == "Input":
            meta = (per_input_meta or {}).get(bid, dataset_meta)
            if meta is None:
                shapes[(bid, 0)] = None
            else:
                shapes[(bid, 0)] = (BatchDim(),) + tuple(meta.input_shape)
            stalled_out[bid] = False
            continue
        in_shapes = []
        any_stalled = False
        for port in range(n_in):
            src = incoming.get((bid, port))
            if src is None:
                in_shapes.append(None)
            else:
                in_shapes.append(shapes.get((src.block, src.port)))
                if stalled_out.get(src.block):
                    any_stalled = True
                    diags.append(
                        Diagnostic(
                            "warning",
                            "terminal-stalled",
                            f"input terminal {port} of {bid} never receives a signal",
                            TerminalTarget(bid, "in", port),
                            flat.paths.get(bid, ()),
                        )
                    )
        failed = False
        if any_stalled:
            out_shapes = [None] * n_out
        else:
            try:
                out_shapes = infer_output_shape(kind, inst.params, in_shapes)
            except ShapeError as exc:
                failed = True
                out_shapes = [None] * n_out
                diags.append(
                    Diagnostic(
                        "error",
                        exc.code,
                        f"{inst.display_name} ({bid}): {exc.message}",
                        BlockTarget(bid),
                        flat.paths.get(bid, ()),
                    )
                )
        stalled_out[bid] = failed or any_stalled
        if stalled_out[bid]:
            for port in range(n_out):
                diags.append(
                    Diagnostic(
                        "warning",
                        "terminal-stalled",
                        f"output terminal {port} of {bid} never produces a signal",
                        TerminalTarget(bid, "out", port),
                        flat.paths.get(bid, ()),
                    )
                )
        for port in range(n_out):
            shapes[(bid, port)] = out_shapes[port] if not stalled_out[bid] else None
    return diags


def propagate_shapes_for_report(
    g: Graph,
    dataset_meta: DatasetMeta | None = None,
    per_input_meta: dict[str, DatasetMeta] | None = None,
) -> dict[str, dict]:
    """Best-effort static shape table for the debug pane (block -> in/out shapes)."""
    flat = flatten_graph(g)
    incoming = flat.incoming()
    table: dict[str, dict] = {}
    indeg = {bid: 0 for bid in flat.blocks}
    succ = flat.successors()
    for c in flat.connections:
        indeg[c.dst.block] += 1
    ready = list(b for b, d in indeg.items() if d == 0)
    heapq.heapify(ready)
    shapes: dict[tuple[str, int], tuple | None] = {}
    order = []
    while ready:
        bid = heapq.heappop(ready)
        order.append(bid)
        for nxt in succ[bid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, nxt)
    for bid in order:
        inst = flat.blocks[bid]
        kind = g.registry.get(inst.kind_id)
        n_in = len(kind.input_terminals(inst.params))
        n_out = len(kind.output_terminals(inst.params))
        if inst.kind_id == "Input":
            meta = (per_input_meta or {}).get(bid, dataset_meta)
            out = [None if meta is None else (BatchDim(),) + tuple(meta.input_shape)]
            ins = []
        else:
            ins = []
            for port in range(n_in):
                src = incoming.get((bid, port))
                ins.append(None if src is None else shapes.get((src.block, src.port)))
            try:
                out = infer_output_shape(kind, inst.params, ins)
            except ShapeError:
                out = [None] * n_out
        for port, s in enumerate(out):
            shapes[(bid, port)] = s
        table[bid] = {
            "inputs": [shape_to_json(s) for s in ins],
            "outputs": [shape_to_json(s) for s in out],
        }
    return table
