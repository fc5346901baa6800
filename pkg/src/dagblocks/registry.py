"""Catalog of block kinds: parameters, terminals, shape rules, forward semantics.

Shape inference works on tuples whose dims are ints or :class:`BatchDim`
(a symbolic batch multiple), so graphs can be validated statically against a
dataset's per-sample shape before any data flows. Forward semantics are
null-absorbing: a null input makes a block emit null outputs without error,
except LogicalOr which coalesces one null and one non-null input.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import tensor as T
from .errors import BlockError, RegistryError, ShapeError
from .signal import Signal
from .tensor import BackwardTransform, Tape, Tensor

SUPERBLOCK_KIND = "__superblock__"
IDENTITY_TRANSFORM = BackwardTransform("identity")


@dataclass(frozen=True)
class BatchDim:
    """Symbolic batch-size multiple; ``BatchDim(2)`` renders as ``2N``."""

    factor: int = 1

    def __add__(self, other):
        if isinstance(other, BatchDim):
            return BatchDim(self.factor + other.factor)
        return NotImplemented

    def __str__(self):
        return "N" if self.factor == 1 else f"{self.factor}N"


Dim = Any  # int | BatchDim
Shape = tuple  # tuple[Dim, ...]


def shape_str(shape) -> str:
    if shape is None:
        return "null"
    return "[" + ", ".join(str(d) for d in shape) + "]"


def dim_to_json(d):
    return d if isinstance(d, int) else str(d)


def shape_to_json(shape):
    return None if shape is None else [dim_to_json(d) for d in shape]


def _concrete(dims, context: str) -> list[int]:
    out = []
    for d in dims:
        if isinstance(d, BatchDim):
            raise ShapeError(f"{context} requires fixed dims, got batch-scaled {d}")
        out.append(int(d))
    return out


# ---------------------------------------------------------------------------
# parameter schemas


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str  # int | float | bool | str | int_set | choice | transform
    default: Any = None
    required: bool = False
    minimum: Any = None
    choices: tuple[str, ...] = ()

    def describe(self) -> dict:
        out = {"name": self.name, "type": self.type, "required": self.required}
        if self.default is not None or not self.required:
            out["default"] = (
                self.default.to_dict()
                if isinstance(self.default, BackwardTransform)
                else list(self.default)
                if isinstance(self.default, tuple)
                else self.default
            )
        if self.minimum is not None:
            out["minimum"] = self.minimum
        if self.choices:
            out["choices"] = list(self.choices)
        return out


def _bad(name, msg) -> RegistryError:
    return RegistryError("invalid-params", f"parameter {name!r} {msg}")


def _check_param(spec: ParamSpec, value):
    if spec.type == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise _bad(spec.name, f"must be an integer, got {value!r}")
        if spec.minimum is not None and value < spec.minimum:
            raise _bad(spec.name, f"must be >= {spec.minimum}, got {value}")
        return value
    if spec.type == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _bad(spec.name, f"must be a number, got {value!r}")
        return float(value)
    if spec.type == "bool":
        if not isinstance(value, bool):
            raise _bad(spec.name, f"must be a boolean, got {value!r}")
        return value
    if spec.type == "str":
        if value is not None and not isinstance(value, str):
            raise _bad(spec.name, f"must be a string, got {value!r}")
        return value
    if spec.type == "choice":
        if value not in spec.choices:
            raise _bad(spec.name, f"must be one of {list(spec.choices)}, got {value!r}")
        return value
    if spec.type == "int_set":
        if not isinstance(value, (list, tuple, set, frozenset)):
            raise _bad(spec.name, f"must be a set of integers, got {value!r}")
        items = sorted(set(value))
        if not items:
            raise _bad(spec.name, "must be non-empty")
        for v in items:
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise _bad(spec.name, f"must contain non-negative integers, got {v!r}")
        return tuple(items)
    if spec.type == "transform":
        if isinstance(value, BackwardTransform):
            return value
        if isinstance(value, dict):
            try:
                return BackwardTransform.from_dict(value)
            except (KeyError, ValueError, TypeError):
                raise _bad(spec.name, f"is not a valid transform: {value!r}") from None
        raise _bad(spec.name, f"must be a transform, got {value!r}")
    raise AssertionError(f"unhandled param type {spec.type}")


# ---------------------------------------------------------------------------
# kinds


@dataclass
class BlockOutputs:
    """forward_block result: the output signals plus loss/metrics for Output blocks."""

    outputs: list[Signal]
    loss: Tensor | None = None
    correct: int | None = None
    count: int | None = None


class Kind:
    kind_id: str = ""
    category: str = "main"
    learnable: bool = False
    param_specs: tuple[ParamSpec, ...] = ()

    def validate_params(self, params: dict | None) -> dict:
        params = dict(params or {})
        known = {s.name for s in self.param_specs}
        for key in params:
            if key not in known:
                raise _bad(key, f"is not a parameter of {self.kind_id}")
        out = {}
        for spec in self.param_specs:
            if spec.name in params:
                out[spec.name] = _check_param(spec, params[spec.name])
            elif spec.required:
                raise _bad(spec.name, f"is required by {self.kind_id}")
            else:
                out[spec.name] = spec.default
        return out

    def input_terminals(self, params: dict) -> tuple[str, ...]:
        return ("in",)

    def output_terminals(self, params: dict) -> tuple[str, ...]:
        return ("out",)

    def infer(self, params: dict, input_shapes: Sequence) -> list:
        raise NotImplementedError

    def init_state(self, params: dict, seed) -> dict[str, Tensor]:
        return {}

    def state_shapes(self, params: dict) -> dict[str, tuple[int, ...]]:
        return {}

    def forward(self, params: dict, state: dict, signals: list[Signal], tape: Tape) -> BlockOutputs:
        raise NotImplementedError

    def describe(self) -> dict:
        defaults = {s.name: s.default for s in self.param_specs}
        return {
            "kind_id": self.kind_id,
            "category": self.category,
            "learnable": self.learnable,
            "params": [s.describe() for s in self.param_specs],
            "inputs": list(self.input_terminals(defaults)),
            "outputs": list(self.output_terminals(defaults)),
        }


def _passthrough(signals: list[Signal], value: Tensor) -> Signal:
    """Single-input blocks keep ground truth, order and phase unchanged."""
    s = signals[0]
    return Signal(value, s.ground_truth, s.order, s.is_train)


class InputKind(Kind):
    kind_id = "Input"
    param_specs = (
        ParamSpec("order_set", "int_set", default=(0,)),
        ParamSpec("dataset_path", "str", default=None),
    )

    def input_terminals(self, params):
        return ()

    def infer(self, params, input_shapes):
        # shape comes from the bound dataset; validation injects it directly
        return [None]

    def forward(self, params, state, signals, tape):
        raise BlockError("internal", "Input blocks are fed by the executor")


class OutputKind(Kind):
    kind_id = "Output"
    param_specs = (ParamSpec("metric", "choice", default="accuracy", choices=("accuracy",)),)

    def output_terminals(self, params):
        return ()

    def infer(self, params, input_shapes):
        s = input_shapes[0]
        if s is None:
            return []
        if len(s) != 2:
            raise ShapeError(
                f"Output expects logits shaped [batch, classes], got {shape_str(s)}"
            )
        return []

    def forward(self, params, state, signals, tape):
        sig = signals[0]
        if sig.is_null:
            return BlockOutputs([])
        if sig.ground_truth is None:
            raise BlockError(
                "missing-ground-truth",
                "Output block received a value without ground truth",
            )
        loss = T.softmax_cross_entropy(sig.value, sig.ground_truth, tape)
        pred = sig.value.data.argmax(axis=1)
        correct = int((pred == np.asarray(sig.ground_truth)).sum())
        return BlockOutputs([], loss=loss, correct=correct, count=len(pred))


class FullyConnectedKind(Kind):
    kind_id = "FullyConnected"
    learnable = True
    param_specs = (
        ParamSpec("in_features", "int", required=True, minimum=1),
        ParamSpec("out_features", "int", required=True, minimum=1),
        ParamSpec("flatten_input", "bool", default=False),
    )

    def _input_features(self, params, s) -> int:
        if params["flatten_input"]:
            rest = _concrete(s[1:], "flatten_input")
            return int(np.prod(rest)) if rest else 0
        if len(s) != 2:
            raise ShapeError(
                f"FullyConnected expects input [batch, {params['in_features']}], "
                f"got {shape_str(s)}; flatten it first or set flatten_input"
            )
        return _concrete(s[1:], "FullyConnected features")[0]

    def infer(self, params, input_shapes):
        s = input_shapes[0]
        if s is None:
            return [None]
        got = self._input_features(params, s)
        if got != params["in_features"]:
            raise ShapeError(
                f"FullyConnected expects {params['in_features']} input features, "
                f"got {got} (input {shape_str(s)})"
            )
        return [(s[0], params["out_features"])]

    def state_shapes(self, params):
        return {
            "weight": (params["in_features"], params["out_features"]),
            "bias": (params["out_features"],),
        }

    def init_state(self, params, seed):
        rng = np.random.default_rng(seed)
        fan_in, fan_out = params["in_features"], params["out_features"]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)
        return {"weight": Tensor(weight), "bias": Tensor(np.zeros(fan_out, dtype=np.float32))}

    def forward(self, params, state, signals, tape):
        x = signals[0].value
        if params["flatten_input"] and len(x.shape) > 2:
            x = T.flatten(x, tape)
        y = T.add(T.matmul(x, state["weight"], tape), state["bias"], tape)
        return BlockOutputs([_passthrough(signals, y)])


class Conv2DKind(Kind):
    kind_id = "Conv2D"
    learnable = True
    param_specs = (
        ParamSpec("in_channels", "int", required=True, minimum=1),
        ParamSpec("out_channels", "int", required=True, minimum=1),
        ParamSpec("kernel", "int", required=True, minimum=1),
        ParamSpec("stride", "int", default=1, minimum=1),
        ParamSpec("padding", "int", default=0, minimum=0),
    )

    def infer(self, params, input_shapes):
        s = input_shapes[0]
        if s is None:
            return [None]
        if len(s) != 4:
            raise ShapeError(
                f"Conv2D expects input [batch, channels, h, w], got {shape_str(s)}"
            )
        c, h, w = _concrete(s[1:], "Conv2D spatial dims")
        if c != params["in_channels"]:
            raise ShapeError(
                f"Conv2D expects {params['in_channels']} input channels, got {c}",
                code="channel-mismatch",
            )
        k, st, p = params["kernel"], params["stride"], params["padding"]
        if k > h + 2 * p or k > w + 2 * p:
            raise ShapeError(
                f"kernel {k} larger than padded input {h + 2 * p}x{w + 2 * p}",
                code="kernel-too-large",
            )
        oh, ow = T.conv_output_hw(h, w, k, st, p)
        return [(s[0], params["out_channels"], oh, ow)]

    def state_shapes(self, params):
        k = params["kernel"]
        return {
            "weight": (params["out_channels"], params["in_channels"], k, k),
            "bias": (params["out_channels"],),
        }

    def init_state(self, params, seed):
        rng = np.random.default_rng(seed)
        c, f, k = params["in_channels"], params["out_channels"], params["kernel"]
        fan_in, fan_out = c * k * k, f * k * k
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(f, c, k, k)).astype(np.float32)
        return {"weight": Tensor(weight), "bias": Tensor(np.zeros(f, dtype=np.float32))}

    def forward(self, params, state, signals, tape):
        y = T.conv2d(
            signals[0].value,
            state["weight"],
            state["bias"],
            params["stride"],
            params["padding"],
            tape,
        )
        return BlockOutputs([_passthrough(signals, y)])


_ACTIVATIONS = {"relu": T.relu, "sigmoid": T.sigmoid, "tanh": T.tanh}


class ActivationKind(Kind):
    kind_id = "Activation"
    param_specs = (
        ParamSpec("fn", "choice", default="relu", choices=("relu", "sigmoid", "tanh")),
    )

    def infer(self, params, input_shapes):
        return [input_shapes[0]]

    def forward(self, params, state, signals, tape):
        y = _ACTIVATIONS[params["fn"]](signals[0].value, tape)
        return BlockOutputs([_passthrough(signals, y)])


class FlattenKind(Kind):
    kind_id = "Flatten"

    def infer(self, params, input_shapes):
        s = input_shapes[0]
        if s is None:
            return [None]
        if len(s) < 2:
            raise ShapeError(
                f"Flatten expects rank >= 2, got {shape_str(s)}", code="rank-too-low"
            )
        rest = _concrete(s[1:], "Flatten")
        return [(s[0], int(np.prod(rest)))]

    def forward(self, params, state, signals, tape):
        return BlockOutputs([_passthrough(signals, T.flatten(signals[0].value, tape))])


class ConcatKind(Kind):
    kind_id = "Concat"
    category = "misc"
    param_specs = (ParamSpec("axis", "int", default=0, minimum=0),)

    def input_terminals(self, params):
        return ("a", "b")

    def infer(self, params, input_shapes):
        a, b = input_shapes
        if a is None or b is None:
            return [None]
        axis = params["axis"]
        if len(a) != len(b):
            raise ShapeError(
                f"Concat inputs must have equal rank, got {shape_str(a)} and {shape_str(b)}",
                detail={"input_index": 1},
            )
        if axis >= len(a):
            raise ShapeError(f"Concat axis {axis} out of range for rank {len(a)}", code="bad-axis")
        for d, (da, db) in enumerate(zip(a, b)):
            if d == axis:
                continue
            if da != db:
                raise ShapeError(
                    f"Concat input 1 has shape {shape_str(b)}, incompatible with "
                    f"{shape_str(a)} on axis {axis}",
                    detail={"input_index": 1},
                )
        da, db = a[axis], b[axis]
        if isinstance(da, BatchDim) != isinstance(db, BatchDim):
            raise ShapeError(
                f"Concat cannot join batch-scaled dim {da} with fixed dim {db}"
            )
        out = list(a)
        out[axis] = da + db
        return [tuple(out)]

    def forward(self, params, state, signals, tape):
        axis = params["axis"]
        value = T.concat([s.value for s in signals], axis, tape)
        gts = [s.ground_truth for s in signals]
        if axis == 0:
            # batch-axis joins keep label rows aligned with value rows
            gt = np.concatenate(gts) if all(g is not None for g in gts) else None
        else:
            gt = next((g for g in gts if g is not None), None)
        ref = signals[0]
        return BlockOutputs([Signal(value, gt, ref.order, ref.is_train)])


class CopyKind(Kind):
    kind_id = "Copy"
    category = "misc"
    param_specs = (ParamSpec("fanout", "int", default=2, minimum=1),)

    def output_terminals(self, params):
        return tuple(f"out{i}" for i in range(params["fanout"]))

    def infer(self, params, input_shapes):
        return [input_shapes[0]] * params["fanout"]

    def forward(self, params, state, signals, tape):
        # each output is its own tape value (buffer shared) so downstream
        # branches keep individually observable gradients; pullbacks sum
        s = signals[0]
        return BlockOutputs([
            Signal(
                T.grad_transform(s.value, IDENTITY_TRANSFORM, tape),
                s.ground_truth,
                s.order,
                s.is_train,
            )
            for _ in range(params["fanout"])
        ])


class LogicalOrKind(Kind):
    kind_id = "LogicalOr"
    category = "misc"

    def input_terminals(self, params):
        return ("a", "b")

    def infer(self, params, input_shapes):
        a, b = input_shapes
        if a is None and b is None:
            return [None]
        if a is None or b is None:
            return [a if b is None else b]
        if a != b:
            raise ShapeError(
                f"LogicalOr inputs must agree in shape, got {shape_str(a)} and {shape_str(b)}"
            )
        return [a]

    def forward(self, params, state, signals, tape):
        live = [s for s in signals if not s.is_null]
        if len(live) == 2:
            raise BlockError(
                "or-ambiguous", "LogicalOr received two non-null inputs in the same pass"
            )
        if not live:
            return BlockOutputs([signals[0].null_like()])
        s = live[0]
        return BlockOutputs([Signal(s.value, s.ground_truth, s.order, s.is_train)])


class GradientTransformKind(Kind):
    kind_id = "GradientTransform"
    category = "misc"
    param_specs = (
        ParamSpec("transform", "transform", default=BackwardTransform("identity")),
    )

    def infer(self, params, input_shapes):
        return [input_shapes[0]]

    def forward(self, params, state, signals, tape):
        y = T.grad_transform(signals[0].value, params["transform"], tape)
        return BlockOutputs([_passthrough(signals, y)])


class IdentityKind(Kind):
    kind_id = "Identity"
    category = "misc"

    def infer(self, params, input_shapes):
        return [input_shapes[0]]

    def forward(self, params, state, signals, tape):
        return BlockOutputs([_passthrough(signals, signals[0].value)])


_NULL_EXEMPT = {"LogicalOr"}


def forward_block(kind: Kind, params: dict, state: dict, signals: list[Signal], tape: Tape) -> BlockOutputs:
    """Run one block, enforcing arity and the null-absorption rule."""
    arity = len(kind.input_terminals(params))
    if len(signals) != arity:
        raise BlockError(
            "bad-arity", f"{kind.kind_id} expects {arity} inputs, got {len(signals)}"
        )
    if kind.kind_id not in _NULL_EXEMPT and any(s.is_null for s in signals):
        if arity == 0:
            raise BlockError("internal", "source blocks cannot be fed signals")
        ref = signals[0]
        n_out = len(kind.output_terminals(params))
        return BlockOutputs([ref.null_like() for _ in range(n_out)])
    try:
        return kind.forward(params, state, signals, tape)
    except BlockError:
        raise
    except ShapeError as exc:
        raise BlockError(exc.code, exc.message, exc.detail) from exc


def infer_output_shape(kind: Kind, params: dict, input_shapes: Sequence) -> list:
    """Kind-specific static shape rule; raises ShapeError, never anything else."""
    arity = len(kind.input_terminals(params))
    if len(input_shapes) != arity:
        raise ShapeError(
            f"{kind.kind_id} expects {arity} input shapes, got {len(input_shapes)}",
            code="bad-arity",
        )
    return kind.infer(params, list(input_shapes))


def init_learnable_state(kind: Kind, params: dict, seed) -> dict[str, Tensor]:
    return kind.init_state(params, seed)


# ---------------------------------------------------------------------------
# custom blocks


@dataclass
class CustomBlockDef:
    """A reusable block: a chain of catalog primitives plus a gradient boundary."""

    name: str
    pipeline: list[tuple[str, dict]]
    backward_transform: BackwardTransform = field(default_factory=lambda: BackwardTransform("identity"))
    saved_weights: dict[str, Tensor] | None = None
    example_input_shape: list[int] | None = None


def _derive_example_shape(kind: Kind, params: dict) -> list[int]:
    if kind.kind_id == "FullyConnected":
        return [1, params["in_features"]]
    if kind.kind_id == "Conv2D":
        side = max(1, params["kernel"] - 2 * params["padding"])
        return [1, params["in_channels"], side, side]
    return [1, 1]


class CustomKind(Kind):
    category = "custom"

    def __init__(self, defn: CustomBlockDef, steps: list[tuple[Kind, dict]]):
        self.defn = defn
        self.kind_id = defn.name
        self._steps = steps
        self.learnable = any(k.learnable for k, _ in steps)

    def infer(self, params, input_shapes):
        shape = input_shapes[0]
        for kind, step_params in self._steps:
            shape = kind.infer(step_params, [shape])[0]
        return [shape]

    def state_shapes(self, params):
        out = {}
        for i, (kind, step_params) in enumerate(self._steps):
            for name, shape in kind.state_shapes(step_params).items():
                out[f"{i}.{name}"] = shape
        return out

    def init_state(self, params, seed):
        state: dict[str, Tensor] = {}
        saved = self.defn.saved_weights or {}
        for i, (kind, step_params) in enumerate(self._steps):
            expected = kind.state_shapes(step_params)
            fresh = None
            for name in expected:
                key = f"{i}.{name}"
                if key in saved:
                    state[key] = saved[key].copy()
                else:
                    if fresh is None:
                        fresh = kind.init_state(step_params, np.random.SeedSequence([_seed_int(seed), i]))
                    state[key] = fresh[name]
        return state

    def forward(self, params, state, signals, tape):
        sig = signals[0]
        value = sig.value
        for i, (kind, step_params) in enumerate(self._steps):
            step_state = {
                name: state[f"{i}.{name}"] for name in kind.state_shapes(step_params)
            }
            result = kind.forward(step_params, step_state, [sig.with_value(value)], tape)
            value = result.outputs[0].value
        value = T.grad_transform(value, self.defn.backward_transform, tape)
        return BlockOutputs([Signal(value, sig.ground_truth, sig.order, sig.is_train)])

    def describe(self) -> dict:
        out = super().describe()
        out["pipeline"] = [
            {"kind_id": k.kind_id, "params": _params_to_json(p)} for k, p in self._steps
        ]
        out["backward_transform"] = self.defn.backward_transform.to_dict()
        return out


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return int(np.random.SeedSequence(seed).entropy)


def _params_to_json(params: dict) -> dict:
    out = {}
    for key, val in params.items():
        if isinstance(val, BackwardTransform):
            out[key] = val.to_dict()
        elif isinstance(val, tuple):
            out[key] = list(val)
        else:
            out[key] = val
    return out


# ---------------------------------------------------------------------------
# registry


_BUILTIN_KINDS = (
    InputKind(),
    OutputKind(),
    FullyConnectedKind(),
    Conv2DKind(),
    ActivationKind(),
    FlattenKind(),
    ConcatKind(),
    CopyKind(),
    LogicalOrKind(),
    GradientTransformKind(),
    IdentityKind(),
)


class BlockRegistry:
    """Immutable builtin catalog plus serialized custom-block registration."""

    def __init__(self):
        self._kinds: dict[str, Kind] = {k.kind_id: k for k in _BUILTIN_KINDS}
        self._custom_order: list[str] = []
        self._lock = threading.Lock()

    def has(self, kind_id: str) -> bool:
        return kind_id in self._kinds

    def get(self, kind_id: str) -> Kind:
        kind = self._kinds.get(kind_id)
        if kind is None:
            raise RegistryError("unknown-kind", f"unknown block kind {kind_id!r}")
        return kind

    def kinds(self) -> list[Kind]:
        builtins = [k for k in _BUILTIN_KINDS]
        customs = [self._kinds[name] for name in self._custom_order]
        return builtins + customs

    def catalog(self) -> list[dict]:
        return [k.describe() for k in self.kinds()]

    def custom_defs(self) -> list[CustomBlockDef]:
        return [self._kinds[name].defn for name in self._custom_order]

    def register_custom(self, defn: CustomBlockDef) -> Kind:
        with self._lock:
            if not defn.name or defn.name == SUPERBLOCK_KIND:
                raise RegistryError("invalid-pipeline", "custom block needs a valid name")
            if defn.name in self._kinds:
                raise RegistryError(
                    "duplicate-kind", f"a block kind named {defn.name!r} already exists"
                )
            if not defn.pipeline:
                raise RegistryError("invalid-pipeline", "custom pipeline is empty")
            steps: list[tuple[Kind, dict]] = []
            for i, (step_id, raw_params) in enumerate(defn.pipeline):
                try:
                    kind = self.get(step_id)
                    params = kind.validate_params(raw_params)
                except RegistryError as exc:
                    raise RegistryError(
                        "invalid-pipeline",
                        f"step {i} ({step_id}): {exc.message}",
                        detail={"step": i},
                    ) from exc
                if len(kind.input_terminals(params)) != 1 or len(kind.output_terminals(params)) != 1:
                    raise RegistryError(
                        "invalid-pipeline",
                        f"step {i} ({step_id}) is not single-input single-output",
                        detail={"step": i},
                    )
                steps.append((kind, params))
            shape = defn.example_input_shape
            if shape is None:
                shape = _derive_example_shape(steps[0][0], steps[0][1])
            shape = tuple(int(d) for d in shape)
            for i, (kind, params) in enumerate(steps):
                try:
                    shape = kind.infer(params, [shape])[0]
                except ShapeError as exc:
                    raise RegistryError(
                        "invalid-pipeline",
                        f"step {i} rejects the example input: {exc.message}",
                        detail={"step": i},
                    ) from exc
            custom = CustomKind(defn, steps)
            saved = defn.saved_weights or {}
            expected = custom.state_shapes({})
            for key, t in saved.items():
                if key not in expected:
                    raise RegistryError(
                        "invalid-pipeline", f"saved weight {key!r} matches no pipeline step"
                    )
                if tuple(t.shape) != tuple(expected[key]):
                    raise RegistryError(
                        "weight-shape-mismatch",
                        f"saved weight {key!r} has shape {list(t.shape)}, "
                        f"expected {list(expected[key])}",
                    )
            self._kinds[defn.name] = custom
            self._custom_order.append(defn.name)
            return custom


def builtin_catalog() -> list[dict]:
    """Descriptors for the default block kinds, in deterministic order."""
    return BlockRegistry().catalog()
