"""Exception taxonomy shared by every engine layer.

Each error carries a machine-readable ``code`` so the HTTP layer and the
CLI can map failures to structured responses without string matching.
"""

from __future__ import annotations

from typing import Any


class EngineError(Exception):
    """Base class for all expected failures."""

    def __init__(self, code: str, message: str, detail: Any = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.detail = detail

    def to_dict(self) -> dict:
        out = {"code": self.code, "message": self.message}
        if self.detail is not None:
            out["detail"] = self.detail
        return out


class ShapeError(EngineError):
    """Tensor or terminal shapes are incompatible."""

    def __init__(self, message: str, code: str = "shape-mismatch", detail: Any = None):
        super().__init__(code, message, detail)


class TapeError(EngineError):
    """Misuse of the gradient tape (non-scalar root, unknown value)."""


class BlockError(EngineError):
    """A block failed to process its inputs during execution."""


class RegistryError(EngineError):
    """Unknown kinds, invalid parameters, or bad custom definitions."""


class GraphError(EngineError):
    """Structural graph edits that cannot be applied."""


class ConnectError(GraphError):
    """A connection was rejected (cycle, occupied input, dangling endpoint)."""


class CompileError(EngineError):
    """The graph cannot be turned into an execution plan."""


class ExecutionError(EngineError):
    """run_step was invoked with unusable inputs."""


class SessionError(EngineError):
    """Invalid training-session lifecycle transition."""


class FormatError(EngineError):
    """A persisted file is malformed; never escapes as a raw parser crash."""
