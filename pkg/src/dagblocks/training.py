"""Training sessions: seeded SGD-with-momentum epochs over dataset splits.

A session snapshots its graph, compiles a plan once, and then runs epochs of
shuffled train batches followed by a full test pass. Each Input block draws
batches from its own bound dataset; the primary input's train split defines
the epoch length and secondary inputs cycle. Everything is deterministic
given the seed. Stop requests are honored cooperatively at batch boundaries,
so the metrics history only ever contains complete epochs.
"""

from __future__ import annotations

import math
import threading
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EngineError, SessionError
from .executor import InputBatch, StepReport, compile_plan, run_step
from .graph import Graph, flatten_graph


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.1
    momentum: float = 0.0
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": float(self.learning_rate),
            "momentum": float(self.momentum),
            "batch_size": int(self.batch_size),
            "epochs": int(self.epochs),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OptimizerConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown optimizer fields {sorted(extra)}")
        return cls(**doc)


def sgd_update(param, grad, velocity, cfg: OptimizerConfig):
    """v <- momentum * v + grad; param <- param - lr * v. Returns (param, velocity)."""
    param = np.asarray(param, dtype=np.float32)
    grad = np.asarray(grad, dtype=np.float32)
    velocity = np.asarray(velocity, dtype=np.float32)
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise EngineError(
            "shape-mismatch",
            f"sgd_update shapes differ: param {param.shape}, grad {grad.shape}, "
            f"velocity {velocity.shape}",
        )
    v = np.float32(cfg.momentum) * velocity + grad
    return param - np.float32(cfg.learning_rate) * v, v


class SgdOptimizer:
    """Per-parameter velocity buffers keyed by 'block_id.state_name'."""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.velocity: dict[str, np.ndarray] = {}

    def apply(self, key: str, param, grad) -> None:
        v = self.velocity.get(key)
        if v is None:
            v = np.zeros_like(param.data)
        updated, v = sgd_update(param.data, grad, v, self.cfg)
        param.data[...] = updated
        self.velocity[key] = v


@dataclass
class OrderMetrics:
    order: int
    loss: float | None
    accuracy: float | None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float
    train_per_order: list[OrderMetrics] = field(default_factory=list)
    test_per_order: list[OrderMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "test_loss": self.test_loss,
            "test_accuracy": self.test_accuracy,
            "train_per_order": [m.to_dict() for m in self.train_per_order],
            "test_per_order": [m.to_dict() for m in self.test_per_order],
        }


class MetricsHistory:
    def __init__(self):
        self.records: list[EpochRecord] = []

    def since(self, epoch: int) -> list[EpochRecord]:
        return [r for r in self.records if r.epoch > epoch]

    def to_dict(self) -> dict:
        return {"epochs": [r.to_dict() for r in self.records]}

    @property
    def final(self) -> EpochRecord | None:
        return self.records[-1] if self.records else None


class _Accumulator:
    """Aggregates per-order losses (weighted by batch rows) and accuracy counts."""

    def __init__(self):
        self.loss_sum: dict[int, float] = {}
        self.loss_weight: dict[int, float] = {}
        self.correct: dict[int, int] = {}
        self.count: dict[int, int] = {}

    def add(self, report: StepReport, rows: int) -> None:
        for order_report in report.orders:
            o = order_report.order
            if order_report.total_loss is not None:
                self.loss_sum[o] = self.loss_sum.get(o, 0.0) + order_report.total_loss * rows
                self.loss_weight[o] = self.loss_weight.get(o, 0.0) + rows
            for m in order_report.output_metrics.values():
                self.correct[o] = self.correct.get(o, 0) + m["correct"]
                self.count[o] = self.count.get(o, 0) + m["count"]

    def per_order(self) -> list[OrderMetrics]:
        out = []
        for o in sorted(set(self.loss_weight) | set(self.count)):
            loss = (
                self.loss_sum[o] / self.loss_weight[o] if self.loss_weight.get(o) else None
            )
            acc = self.correct[o] / self.count[o] if self.count.get(o) else None
            out.append(OrderMetrics(o, loss, acc))
        return out

    def totals(self) -> tuple[float, float]:
        w = sum(self.loss_weight.values())
        loss = sum(self.loss_sum.values()) / w if w else float("nan")
        n = sum(self.count.values())
        acc = sum(self.correct.values()) / n if n else 0.0
        return loss, acc


class Session:
    """One training context: graph snapshot, plan, optimizer state, metrics."""

    def __init__(
        self,
        session_id: str,
        graph: Graph,
        cfg: OptimizerConfig,
        datasets: dict[str, "DatasetLike"],
    ):
        self.session_id = session_id
        self.graph = graph.snapshot()
        self.plan = compile_plan(self.graph)
        self.cfg = cfg
        self.optimizer = SgdOptimizer(cfg)
        self.datasets = datasets
        self.status = "idle"
        self.metrics = MetricsHistory()
        self.epoch = 0
        self.failure: dict | None = None
        self.last_report: StepReport | None = None
        self._stop = threading.Event()
        self._lock = threading.RLock()
        flat = flatten_graph(self.graph)
        self.input_ids = sorted(
            bid for bid, inst in flat.blocks.items() if inst.kind_id == "Input"
        )
        missing = [bid for bid in self.input_ids if bid not in datasets]
        if missing:
            raise SessionError(
                "missing-batch", f"no dataset bound for Input blocks {missing}"
            )
        self.primary = self.input_ids[0]

    # -- snapshot readers (safe to call while training runs) ----------------

    def status_view(self) -> dict:
        with self._lock:
            return {
                "session_id": self.session_id,
                "status": self.status,
                "epoch": self.epoch,
                "total_epochs": self.cfg.epochs,
                "failure": self.failure,
            }

    def metrics_since(self, epoch: int) -> list[EpochRecord]:
        with self._lock:
            return list(self.metrics.since(epoch))

    def report_view(self) -> StepReport | None:
        with self._lock:
            return self.last_report


class DatasetLike:
    """Anything with samples/labels arrays, a train_count, and a split() method."""

    samples: np.ndarray
    labels: np.ndarray
    train_count: int

    def split(self, which: str):  # pragma: no cover - protocol only
        raise NotImplementedError


def _epoch_batches(session: Session, perms: dict[str, np.ndarray], split: str):
    """Yield batch dicts; the primary input drives the count, others cycle."""
    cfg = session.cfg
    primary_x, _ = session.datasets[session.primary].split(split)
    n = primary_x.shape[0]
    n_batches = max(1, math.ceil(n / cfg.batch_size))
    splits = {bid: session.datasets[bid].split(split) for bid in session.input_ids}
    for j in range(n_batches):
        lo = j * cfg.batch_size
        rows = min(cfg.batch_size, n - lo)
        if rows <= 0:
            break
        batch: dict[str, InputBatch] = {}
        for bid in session.input_ids:
            x, y = splits[bid]
            count = x.shape[0]
            perm = perms[bid]
            if bid == session.primary:
                idx = perm[lo:lo + rows]
            else:
                idx = perm[(lo + np.arange(rows)) % count]
            batch[bid] = InputBatch(x[idx], y[idx])
        yield rows, batch


def _run_split(session: Session, split: str, phase: str, perms=None) -> _Accumulator | None:
    """One pass over a split; returns None if stopped mid-way."""
    if perms is None:
        perms = {
            bid: np.arange(session.datasets[bid].split(split)[0].shape[0])
            for bid in session.input_ids
        }
    accum = _Accumulator()
    optimizer = session.optimizer if phase == "train" else None
    for rows, batch in _epoch_batches(session, perms, split):
        if session._stop.is_set():
            return None
        report = run_step(session.plan, session.graph, batch, phase, optimizer=optimizer)
        with session._lock:
            session.last_report = report
        accum.add(report, rows)
    return accum


def train(session: Session) -> MetricsHistory:
    """Run the configured epochs; blocks until finished, stopped, or failed."""
    with session._lock:
        if session.status == "running":
            raise SessionError("already-running", "session is already training")
        if session.status == "failed":
            raise SessionError("session-failed", "failed sessions cannot be restarted")
        session.status = "running"
        session._stop.clear()
    rng = np.random.default_rng(session.cfg.seed)
    try:
        start = session.epoch
        for epoch in range(start + 1, start + session.cfg.epochs + 1):
            perms = {
                bid: rng.permutation(session.datasets[bid].train_count)
                for bid in session.input_ids
            }
            train_accum = _run_split(session, "train", "train", perms)
            if train_accum is None:
                with session._lock:
                    session.status = "stopped"
                return session.metrics
            test_accum = _run_split(session, "test", "test")
            if test_accum is None:
                with session._lock:
                    session.status = "stopped"
                return session.metrics
            train_loss, train_acc = train_accum.totals()
            test_loss, test_acc = test_accum.totals()
            record = EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                train_accuracy=train_acc,
                test_loss=test_loss,
                test_accuracy=test_acc,
                train_per_order=train_accum.per_order(),
                test_per_order=test_accum.per_order(),
            )
            with session._lock:
                session.metrics.records.append(record)
                session.epoch = epoch
        with session._lock:
            session.status = "finished"
    except EngineError as exc:
        with session._lock:
            session.status = "failed"
            session.failure = exc.to_dict()
    return session.metrics


def evaluate(session: Session, split: str = "test") -> tuple[float, float]:
    """Loss and accuracy over a split; never mutates parameters."""
    accum = _Accumulator()
    for rows, batch in _epoch_batches(
        session,
        {
            bid: np.arange(session.datasets[bid].split(split)[0].shape[0])
            for bid in session.input_ids
        },
        split,
    ):
        report = run_step(session.plan, session.graph, batch, "test")
        with session._lock:
            session.last_report = report
        accum.add(report, rows)
    return accum.totals()


def stop(session: Session) -> None:
    with session._lock:
        if session.status != "running":
            raise SessionError("not-running", f"session is {session.status}, not running")
    session._stop.set()
