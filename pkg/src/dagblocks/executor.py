"""Deterministic execution of flattened block graphs.

A plan is a Kahn topological order with ties broken by ascending block id, so
isomorphic graphs always execute identically. A training step iterates the
sorted order schedule; for each order, Input blocks whose order_set contains
it emit their batch while the rest emit null signals, every block runs on a
fresh tape, and (in the train phase) gradients reach the optimizer before the
next order begins. A failed block stalls only its downstream cone.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import BlockError, CompileError, ExecutionError
from .graph import FlatGraph, Graph, flatten_graph
from .registry import forward_block
from .signal import Signal
from .tensor import Tape, Tensor, backward


@dataclass(frozen=True)
class ExecutionPlan:
    steps: tuple[str, ...]
    order_schedule: tuple[int, ...]


@dataclass
class InputBatch:
    values: np.ndarray
    labels: np.ndarray | None = None


@dataclass
class BlockReport:
    block_id: str
    status: str  # "ok" | "null" | "failed" | "stalled"
    input_shapes: list[list[int] | None] = field(default_factory=list)
    output_shapes: list[list[int] | None] = field(default_factory=list)
    error: dict | None = None
    output_values: list[np.ndarray | None] = field(default_factory=list)
    input_grads: list[np.ndarray | None] | None = None
    output_grads: list[np.ndarray | None] | None = None
    loss: float | None = None
    correct: int | None = None
    count: int | None = None


@dataclass
class OrderReport:
    order: int
    total_loss: float | None
    blocks: dict[str, BlockReport]
    output_metrics: dict[str, dict]
    updated_params: list[str] = field(default_factory=list)


@dataclass
class StepReport:
    phase: str
    orders: list[OrderReport]

    def last_entry(self, block_id: str) -> BlockReport | None:
        for order_report in reversed(self.orders):
            entry = order_report.blocks.get(block_id)
            if entry is not None:
                return entry
        return None


def compile_plan(g: Graph) -> ExecutionPlan:
    flat = flatten_graph(g)
    input_orders: set[int] = set()
    for inst in flat.blocks.values():
        if inst.kind_id == "Input":
            input_orders.update(inst.params["order_set"])
    if not input_orders:
        raise CompileError("no-input", "graph has no Input block to drive execution")

    indeg = {bid: 0 for bid in flat.blocks}
    succ: dict[str, list[str]] = {bid: [] for bid in flat.blocks}
    for c in flat.connections:
        indeg[c.dst.block] += 1
        succ[c.src.block].append(c.dst.block)
    ready = [bid for bid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    steps: list[str] = []
    while ready:
        bid = heapq.heappop(ready)
        steps.append(bid)
        for nxt in succ[bid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(steps) != len(flat.blocks):
        raise CompileError("cycle", "flattened graph contains a cycle")
    return ExecutionPlan(tuple(steps), tuple(sorted(input_orders)))


def _shape_of(sig: Signal | None) -> list[int] | None:
    if sig is None or sig.is_null:
        return None
    return list(sig.value.shape)


def run_step(
    plan: ExecutionPlan,
    g: Graph,
    batch: dict[str, InputBatch],
    phase: str,
    optimizer=None,
    capture_gradients: bool = False,
) -> StepReport:
    """Run every order of one step; train phase also backprops and updates."""
    is_train = phase == "train"
    flat = flatten_graph(g)
    incoming = flat.incoming()
    registry = g.registry

    for bid, inst in flat.blocks.items():
        if inst.kind_id != "Input":
            continue
        if bid not in batch:
            raise ExecutionError("missing-batch", f"no batch provided for Input {bid}")
        ib = batch[bid]
        if ib.labels is not None and len(ib.labels) != ib.values.shape[0]:
            raise ExecutionError(
                "data-shape-mismatch",
                f"Input {bid}: {ib.values.shape[0]} rows but {len(ib.labels)} labels",
            )

    report = StepReport(phase=phase, orders=[])
    for order in plan.order_schedule:
        tape = Tape()
        signals: dict[tuple[str, int], Signal] = {}
        dead: set[str] = set()  # failed or stalled
        entries: dict[str, BlockReport] = {}
        losses: list[tuple[str, T.Tensor]] = []

        for bid in plan.steps:
            inst = flat.blocks[bid]
            kind = registry.get(inst.kind_id)
            if inst.kind_id == "Input":
                ib = batch[bid]
                if order in inst.params["order_set"]:
                    sig = Signal(Tensor(ib.values), ib.labels, order, is_train)
                else:
                    sig = Signal(None, None, order, is_train)
                signals[(bid, 0)] = sig
                entries[bid] = BlockReport(
                    bid,
                    "null" if sig.is_null else "ok",
                    output_shapes=[_shape_of(sig)],
                    output_values=[None if sig.is_null else sig.value.data],
                )
                continue

            n_in = len(kind.input_terminals(inst.params))
            n_out = len(kind.output_terminals(inst.params))
            in_sigs: list[Signal] = []
            stalled = False
            for port in range(n_in):
                src = incoming.get((bid, port))
                if src is None:
                    in_sigs.append(Signal(None, None, order, is_train))
                    continue
                if src.block in dead:
                    stalled = True
                    break
                in_sigs.append(signals[(src.block, src.port)])
            if stalled:
                dead.add(bid)
                entries[bid] = BlockReport(bid, "stalled")
                continue

            try:
                result = forward_block(kind, inst.params, inst.state, in_sigs, tape)
            except BlockError as exc:
                dead.add(bid)
                entries[bid] = BlockReport(
                    bid,
                    "failed",
                    input_shapes=[_shape_of(s) for s in in_sigs],
                    error=exc.to_dict(),
                )
                continue

            for port, sig in enumerate(result.outputs):
                signals[(bid, port)] = sig
            entry = BlockReport(
                bid,
                "ok" if any(not s.is_null for s in result.outputs) or result.loss is not None else "null",
                input_shapes=[_shape_of(s) for s in in_sigs],
                output_shapes=[_shape_of(s) for s in result.outputs],
                output_values=[None if s.is_null else s.value.data for s in result.outputs],
            )
            if result.loss is not None:
                entry.loss = result.loss.item()
                entry.correct = result.correct
                entry.count = result.count
                losses.append((bid, result.loss))
            entries[bid] = entry

        total_tensor = None
        for _, loss_tensor in losses:
            total_tensor = (
                loss_tensor if total_tensor is None else T.add(total_tensor, loss_tensor, tape)
            )

        updated: list[str] = []
        if total_tensor is not None and is_train and optimizer is not None:
            backward(tape, total_tensor)
            for bid in sorted(flat.blocks):
                inst = flat.blocks[bid]
                for name in sorted(inst.state):
                    param = inst.state[name]
                    grad = tape.grad(param)
                    if grad is not None:
                        optimizer.apply(f"{bid}.{name}", param, grad)
                        updated.append(f"{bid}.{name}")
        elif total_tensor is not None and is_train:
            backward(tape, total_tensor)

        if capture_gradients and is_train and total_tensor is not None:
            for bid, entry in entries.items():
                if entry.status in ("failed", "stalled"):
                    continue
                inst = flat.blocks[bid]
                kind = registry.get(inst.kind_id)
                n_in = len(kind.input_terminals(inst.params))
                in_grads = []
                for port in range(n_in):
                    src = incoming.get((bid, port))
                    sig = signals.get((src.block, src.port)) if src else None
                    g_arr = tape.grad(sig.value) if sig and not sig.is_null else None
                    in_grads.append(g_arr)
                out_grads = []
                n_out = len(kind.output_terminals(inst.params))
                for port in range(n_out):
                    sig = signals.get((bid, port))
                    out_grads.append(
                        tape.grad(sig.value) if sig and not sig.is_null else None
                    )
                entry.input_grads = in_grads
                entry.output_grads = out_grads

        metrics = {
            bid: {"loss": e.loss, "correct": e.correct, "count": e.count}
            for bid, e in entries.items()
            if e.loss is not None
        }
        report.orders.append(
            OrderReport(
                order=order,
                total_loss=None if total_tensor is None else total_tensor.item(),
                blocks=entries,
                output_metrics=metrics,
                updated_params=updated,
            )
        )
    return report


# ---------------------------------------------------------------------------
# inspection


def _pool_axis(a: np.ndarray, axis: int, target: int = 64) -> np.ndarray:
    n = a.shape[axis]
    if n <= target:
        return a
    edges = np.linspace(0, n, target + 1).astype(int)
    sums = np.add.reduceat(a, edges[:-1], axis=axis)
    counts = np.diff(edges).astype(a.dtype)
    shape = [1, 1]
    shape[axis] = target
    return sums / counts.reshape(shape)


def downsample_heatmap(arr: np.ndarray) -> np.ndarray:
    """Collapse to 2-D by averaging leading dims, then mean-pool to <= 64x64."""
    a = np.asarray(arr, dtype=np.float32)
    while a.ndim > 2:
        a = a.mean(axis=0)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    a = _pool_axis(a, 0)
    a = _pool_axis(a, 1)
    return np.ascontiguousarray(a, dtype=np.float32)


@dataclass
class BlockInspection:
    block_id: str
    status: str
    input_shapes: list[list[int] | None]
    output_shapes: list[list[int] | None]
    heatmaps: list[np.ndarray | None] | None
    error: dict | None = None
    loss: float | None = None

    def to_dict(self) -> dict:
        return {
            "block_id": self.block_id,
            "status": self.status,
            "stalled": self.status == "stalled",
            "input_shapes": self.input_shapes,
            "output_shapes": self.output_shapes,
            "heatmaps": None
            if self.heatmaps is None
            else [None if h is None else h.tolist() for h in self.heatmaps],
            "error": self.error,
            "loss": self.loss,
        }


def inspect_block(report: StepReport, block_id: str) -> BlockInspection:
    """Shapes plus downsampled value heatmaps from the block's latest execution."""
    entry = report.last_entry(block_id)
    if entry is None:
        raise ExecutionError("unknown-block", f"block {block_id!r} was not executed")
    if entry.status in ("stalled", "failed"):
        return BlockInspection(
            block_id, entry.status, entry.input_shapes, entry.output_shapes,
            heatmaps=None, error=entry.error,
        )
    heatmaps = [
        None if v is None else downsample_heatmap(v) for v in entry.output_values
    ]
    return BlockInspection(
        block_id, entry.status, entry.input_shapes, entry.output_shapes,
        heatmaps=heatmaps, loss=entry.loss,
    )
