"""dagblocks: compose, validate, train and inspect neural nets as block DAGs."""

from .tensor import Tensor, Tape, BackwardTransform, backward
from .signal import Signal
from .registry import BlockRegistry, CustomBlockDef, builtin_catalog
from .graph import (
    Graph,
    Diagnostic,
    DatasetMeta,
    add_block,
    connect,
    merge_superblock,
    expand_superblock,
    validate,
)
from .executor import ExecutionPlan, InputBatch, StepReport, compile_plan, run_step, inspect_block
from .training import MetricsHistory, OptimizerConfig, Session, evaluate, stop, train
from .persistence import (
    Dataset,
    ProjectFile,
    load_custom_block,
    load_project,
    read_dataset,
    save_custom_block,
    save_dataset,
    save_project,
)

__all__ = [
    "Tensor",
    "Tape",
    "BackwardTransform",
    "backward",
    "Signal",
    "BlockRegistry",
    "CustomBlockDef",
    "builtin_catalog",
    "Graph",
    "Diagnostic",
    "DatasetMeta",
    "add_block",
    "connect",
    "merge_superblock",
    "expand_superblock",
    "validate",
    "ExecutionPlan",
    "InputBatch",
    "StepReport",
    "compile_plan",
    "run_step",
    "inspect_block",
    "MetricsHistory",
    "OptimizerConfig",
    "Session",
    "evaluate",
    "stop",
    "train",
    "Dataset",
    "ProjectFile",
    "load_custom_block",
    "load_project",
    "read_dataset",
    "save_custom_block",
    "save_dataset",
    "save_project",
]
