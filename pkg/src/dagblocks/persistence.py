"""Bit-exact file formats: projects (.dbproj), datasets (.dbds), custom blocks (.dbblk).

All three share one container layout: a 4-byte magic, a little-endian u32
version, a little-endian u32 header length, a canonical UTF-8 JSON header
(sorted keys, compact separators), then a raw little-endian binary payload.
Serialization is canonical, so save -> load -> save is byte-identical.
Parsers convert every malformed input into a structured :class:`FormatError`;
they never crash the process. Writes go through a temp file plus rename.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EngineError, FormatError
from .graph import (
    SUPERBLOCK_KIND,
    BlockInstance,
    Connection,
    DatasetMeta,
    Endpoint,
    Graph,
    SuperBlockBody,
    _find_cycle_blocks,
    flatten_graph,
)
from .registry import BlockRegistry, CustomBlockDef, _params_to_json
from .tensor import BackwardTransform, Tensor
from .training import OptimizerConfig

MAGIC_PROJECT = b"DBPJ"
MAGIC_DATASET = b"DBDS"
MAGIC_BLOCK = b"DBBK"
FORMAT_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _violation(message: str, path: str = "") -> FormatError:
    return FormatError("schema-violation", message, detail={"path": path} if path else None)


def _parse_container(data: bytes, magic: bytes) -> tuple[dict, bytes]:
    if len(data) < 4 or data[:4] != magic:
        raise FormatError("bad-magic", f"expected magic {magic.decode()} at offset 0")
    if len(data) < 12:
        raise FormatError("length-mismatch", "file too short for version and header length")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError("version-unsupported", f"format version {version} is not supported")
    if header_len > len(data) - 12:
        raise FormatError(
            "length-mismatch",
            f"header length {header_len} exceeds file payload ({len(data) - 12} bytes)",
        )
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _violation(f"header is not valid JSON: {exc}", "/") from None
    if not isinstance(header, dict):
        raise _violation("header must be a JSON object", "/")
    return header, data[12 + header_len:]


def _build_container(magic: bytes, header: dict, payload: bytes) -> bytes:
    hbytes = _canonical_json(header)
    return magic + struct.pack("<II", FORMAT_VERSION, len(hbytes)) + hbytes + payload


def _expect(cond: bool, message: str, path: str) -> None:
    if not cond:
        raise _violation(message, path)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    samples: np.ndarray  # [num_samples, *input_shape] float32
    labels: np.ndarray  # [num_samples] int32
    num_classes: int
    train_count: int

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.samples.shape[1:])

    @property
    def num_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def meta(self) -> DatasetMeta:
        return DatasetMeta(self.input_shape, self.num_classes)

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        if which == "train":
            return self.samples[: self.train_count], self.labels[: self.train_count]
        if which == "test":
            return self.samples[self.train_count:], self.labels[self.train_count:]
        raise ValueError(f"unknown split {which!r}")


def write_dataset(samples, labels, num_classes: int, train_count: int, path) -> None:
    samples = np.ascontiguousarray(samples, dtype="<f4")
    labels = np.ascontiguousarray(labels, dtype="<i4")
    n = samples.shape[0]
    if samples.ndim < 2:
        raise _violation("samples must be [num_samples, ...input_shape]", "/samples")
    if labels.shape != (n,):
        raise FormatError("length-mismatch", f"need {n} labels, got {labels.shape}")
    if not 0 < train_count < n:
        raise _violation(f"train_count must be in (0, {n}), got {train_count}", "/train_count")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise FormatError(
            "label-out-of-range",
            f"labels must lie in [0, {num_classes}), got {labels.min()}..{labels.max()}",
        )
    header = {
        "num_samples": int(n),
        "input_shape": [int(d) for d in samples.shape[1:]],
        "num_classes": int(num_classes),
        "train_count": int(train_count),
    }
    _atomic_write(path, _build_container(MAGIC_DATASET, header, samples.tobytes() + labels.tobytes()))


def read_dataset(path) -> Dataset:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError("io-error", f"cannot read dataset: {exc}") from None
    try:
        header, payload = _parse_container(data, MAGIC_DATASET)
        for key in ("num_samples", "num_classes", "train_count"):
            _expect(_is_int(header.get(key)), f"{key} must be an integer", f"/{key}")
        shape = header.get("input_shape")
        _expect(
            isinstance(shape, list) and shape and all(_is_int(d) and d >= 1 for d in shape),
            "input_shape must be a non-empty list of positive integers",
            "/input_shape",
        )
        n = header["num_samples"]
        _expect(n >= 2, "num_samples must be >= 2 to allow a train/test split", "/num_samples")
        _expect(header["num_classes"] >= 1, "num_classes must be >= 1", "/num_classes")
        if not 0 < header["train_count"] < n:
            raise _violation(
                f"train_count must be in (0, {n}), got {header['train_count']}", "/train_count"
            )
        per_sample = int(np.prod(shape))
        expected = n * per_sample * 4 + n * 4
        if len(payload) != expected:
            raise FormatError(
                "length-mismatch",
                f"payload holds {len(payload)} bytes, header implies {expected}",
            )
        samples = np.frombuffer(payload[: n * per_sample * 4], dtype="<f4").reshape(n, *shape)
        labels = np.frombuffer(payload[n * per_sample * 4:], dtype="<i4")
        if labels.size and (labels.min() < 0 or labels.max() >= header["num_classes"]):
            raise FormatError(
                "label-out-of-range",
                f"labels must lie in [0, {header['num_classes']}), "
                f"got {labels.min()}..{labels.max()}",
            )
        return Dataset(
            samples=np.ascontiguousarray(samples),
            labels=np.ascontiguousarray(labels),
            num_classes=header["num_classes"],
            train_count=header["train_count"],
        )
    except FormatError:
        raise
    except Exception as exc:  # malformed input must never crash the caller
        raise _violation(f"malformed dataset file: {exc}") from None


def save_dataset(ds: Dataset, path) -> None:
    write_dataset(ds.samples, ds.labels, ds.num_classes, ds.train_count, path)


# ---------------------------------------------------------------------------
# graph documents


def graph_to_doc(g: Graph) -> dict:
    blocks = []
    for bid in sorted(g.blocks):
        inst = g.blocks[bid]
        blocks.append(
            {
                "block_id": bid,
                "kind_id": inst.kind_id,
                "display_name": inst.display_name,
                "params": _params_to_json(inst.params),
                "position": [float(inst.position[0]), float(inst.position[1])],
            }
        )
    connections = [
        {"src": [c.src.block, c.src.port], "dst": [c.dst.block, c.dst.port]}
        for c in sorted(g.connections)
    ]
    superblocks = {}
    for bid in sorted(g.superblocks):
        body = g.superblocks[bid]
        superblocks[bid] = {
            "graph": graph_to_doc(body.graph),
            "boundary_in": [[b, p] for b, p in body.boundary_in],
            "boundary_out": [[b, p] for b, p in body.boundary_out],
        }
    return {
        "next_id": g.next_id,
        "blocks": blocks,
        "connections": connections,
        "superblocks": superblocks,
    }


def collect_weights(g: Graph) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}

    def walk(graph: Graph):
        for bid, inst in graph.blocks.items():
            for key, t in inst.state.items():
                out[f"block/{bid}/{key}"] = t
        for body in graph.superblocks.values():
            walk(body.graph)

    walk(g)
    return out


def _endpoint(doc, path) -> Endpoint:
    _expect(
        isinstance(doc, list) and len(doc) == 2 and isinstance(doc[0], str) and _is_int(doc[1]),
        "endpoint must be [block_id, port]",
        path,
    )
    return Endpoint(doc[0], doc[1])


def graph_from_doc(
    doc: dict,
    registry: BlockRegistry,
    weights: dict[str, np.ndarray] | None,
    seed: int = 0,
    path: str = "/graph",
    _root: bool = True,
) -> Graph:
    """Rebuild a graph; with ``weights`` absent, learnable state is seeded fresh."""
    _expect(isinstance(doc, dict), "graph must be an object", path)
    g = Graph(registry)
    next_id = doc.get("next_id", 1)
    _expect(_is_int(next_id) and next_id >= 1, "next_id must be a positive integer", f"{path}/next_id")
    g.next_id = next_id
    raw_blocks = doc.get("blocks", [])
    _expect(isinstance(raw_blocks, list), "blocks must be a list", f"{path}/blocks")
    raw_supers = doc.get("superblocks", {})
    _expect(isinstance(raw_supers, dict), "superblocks must be an object", f"{path}/superblocks")

    for i, entry in enumerate(raw_blocks):
        bpath = f"{path}/blocks/{i}"
        _expect(isinstance(entry, dict), "block must be an object", bpath)
        bid = entry.get("block_id")
        _expect(isinstance(bid, str) and bid, "block_id must be a non-empty string", f"{bpath}/block_id")
        _expect(bid not in g.blocks, f"duplicate block_id {bid!r}", f"{bpath}/block_id")
        kind_id = entry.get("kind_id")
        _expect(isinstance(kind_id, str), "kind_id must be a string", f"{bpath}/kind_id")
        pos = entry.get("position", [0.0, 0.0])
        _expect(
            isinstance(pos, list) and len(pos) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pos),
            "position must be [x, y]",
            f"{bpath}/position",
        )
        display = entry.get("display_name", kind_id)
        _expect(isinstance(display, str) and display.strip() != "", "display_name must be a non-empty string", f"{bpath}/display_name")
        if kind_id == SUPERBLOCK_KIND:
            _expect(bid in raw_supers, f"SuperBlock {bid!r} has no body", f"{path}/superblocks/{bid}")
            params = {}
            state = {}
        else:
            try:
                kind = registry.get(kind_id)
                params = kind.validate_params(entry.get("params", {}))
            except EngineError as exc:
                raise _violation(f"block {bid}: {exc.message}", f"{bpath}/params") from None
            state = {}
            for key, shape in kind.state_shapes(params).items():
                wname = f"block/{bid}/{key}"
                if weights is None:
                    continue
                if wname not in weights:
                    raise _violation(f"missing weights for {wname}", f"{bpath}")
                arr = weights[wname]
                if tuple(arr.shape) != tuple(shape):
                    raise FormatError(
                        "weight-shape-mismatch",
                        f"{wname} has shape {list(arr.shape)}, expected {list(shape)}",
                    )
                state[key] = Tensor(arr)
            if weights is None and kind.learnable:
                state = kind.init_state(params, np.random.SeedSequence([seed, i]))
        g.blocks[bid] = BlockInstance(
            block_id=bid,
            kind_id=kind_id,
            params=params,
            state=state,
            display_name=display,
            position=(float(pos[0]), float(pos[1])),
        )

    for bid, sdoc in raw_supers.items():
        spath = f"{path}/superblocks/{bid}"
        _expect(bid in g.blocks, f"superblock body {bid!r} has no block entry", spath)
        _expect(isinstance(sdoc, dict), "superblock body must be an object", spath)
        sub = graph_from_doc(sdoc.get("graph", {}), registry, weights, seed, f"{spath}/graph", _root=False)
        for key in ("boundary_in", "boundary_out"):
            _expect(isinstance(sdoc.get(key), list), f"{key} must be a list", f"{spath}/{key}")
        boundary_in = []
        for k, e in enumerate(sdoc["boundary_in"]):
            ep = _endpoint(e, f"{spath}/boundary_in/{k}")
            boundary_in.append((ep.block, ep.port))
        boundary_out = []
        for k, e in enumerate(sdoc["boundary_out"]):
            ep = _endpoint(e, f"{spath}/boundary_out/{k}")
            boundary_out.append((ep.block, ep.port))
        for b, p in boundary_in + boundary_out:
            _expect(b in sub.blocks, f"boundary references unknown inner block {b!r}", spath)
        g.superblocks[bid] = SuperBlockBody(sub, boundary_in, boundary_out)

    raw_conns = doc.get("connections", [])
    _expect(isinstance(raw_conns, list), "connections must be a list", f"{path}/connections")
    seen_dst = set()
    for i, entry in enumerate(raw_conns):
        cpath = f"{path}/connections/{i}"
        _expect(isinstance(entry, dict), "connection must be an object", cpath)
        src = _endpoint(entry.get("src"), f"{cpath}/src")
        dst = _endpoint(entry.get("dst"), f"{cpath}/dst")
        for ep, direction in ((src, "out"), (dst, "in")):
            _expect(ep.block in g.blocks, f"connection references unknown block {ep.block!r}", cpath)
            arity = g.output_arity(ep.block) if direction == "out" else g.input_arity(ep.block)
            _expect(
                0 <= ep.port < arity,
                f"terminal index {ep.port} out of range for {ep.block} ({arity} {direction} terminals)",
                cpath,
            )
        _expect(dst not in seen_dst, f"input terminal {dst.block}[{dst.port}] has two connections", cpath)
        seen_dst.add(dst)
        g.connections.append(Connection(src, dst))

    if _root:  # only the root sees the fully assembled graph
        flat = flatten_graph(g)
        inner_ids: list[str] = []

        def count_ids(graph: Graph):
            inner_ids.extend(graph.blocks)
            for body in graph.superblocks.values():
                count_ids(body.graph)

        count_ids(g)
        _expect(
            len(inner_ids) == len(set(inner_ids)),
            "block ids collide across SuperBlock nesting",
            path,
        )
        if _find_cycle_blocks(flat):
            raise _violation("expanded graph contains a cycle", path)
    return g


# ---------------------------------------------------------------------------
# custom block files


def custom_def_to_doc(defn: CustomBlockDef) -> dict:
    return {
        "name": defn.name,
        "pipeline": [
            {"kind_id": kind_id, "params": _params_to_json(params)}
            for kind_id, params in defn.pipeline
        ],
        "backward_transform": defn.backward_transform.to_dict(),
        "example_input_shape": (
            None if defn.example_input_shape is None else [int(d) for d in defn.example_input_shape]
        ),
        "weights": sorted(defn.saved_weights or {}),
    }


def custom_def_from_doc(doc: dict, registry: BlockRegistry, weights: dict[str, np.ndarray], path: str) -> CustomBlockDef:
    _expect(isinstance(doc, dict), "custom block must be an object", path)
    name = doc.get("name")
    _expect(isinstance(name, str) and name, "name must be a non-empty string", f"{path}/name")
    raw_pipe = doc.get("pipeline")
    _expect(isinstance(raw_pipe, list) and raw_pipe, "pipeline must be a non-empty list", f"{path}/pipeline")
    pipeline = []
    for i, step in enumerate(raw_pipe):
        spath = f"{path}/pipeline/{i}"
        _expect(isinstance(step, dict), "pipeline step must be an object", spath)
        kind_id = step.get("kind_id")
        _expect(isinstance(kind_id, str), "kind_id must be a string", f"{spath}/kind_id")
        if not registry.has(kind_id):
            raise FormatError(
                "pipeline-invalid", f"pipeline step {i} references unknown kind {kind_id!r}"
            )
        try:
            params = registry.get(kind_id).validate_params(step.get("params", {}))
        except EngineError as exc:
            raise FormatError("pipeline-invalid", f"pipeline step {i}: {exc.message}") from None
        pipeline.append((kind_id, params))
    try:
        transform = BackwardTransform.from_dict(doc.get("backward_transform", {"variant": "identity"}))
    except (KeyError, ValueError, TypeError):
        raise _violation("backward_transform is invalid", f"{path}/backward_transform") from None
    shape = doc.get("example_input_shape")
    if shape is not None:
        _expect(
            isinstance(shape, list) and all(_is_int(d) and d >= 1 for d in shape),
            "example_input_shape must be a list of positive integers",
            f"{path}/example_input_shape",
        )
    names = doc.get("weights", [])
    _expect(isinstance(names, list) and all(isinstance(x, str) for x in names), "weights must be a list of names", f"{path}/weights")
    saved = {}
    for wname in names:
        full = f"custom/{name}/{wname}"
        _expect(full in weights, f"missing weight payload {full}", f"{path}/weights")
        saved[wname] = Tensor(weights[full])
    return CustomBlockDef(
        name=name,
        pipeline=pipeline,
        backward_transform=transform,
        saved_weights=saved or None,
        example_input_shape=shape,
    )


def _weights_payload(entries: dict[str, Tensor]) -> tuple[list[dict], bytes]:
    manifest = []
    chunks = []
    for name in sorted(entries):
        t = entries[name]
        manifest.append({"name": name, "shape": [int(d) for d in t.shape]})
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return manifest, b"".join(chunks)


def _weights_from_payload(manifest, payload: bytes, path: str) -> dict[str, np.ndarray]:
    _expect(isinstance(manifest, list), "weights manifest must be a list", path)
    out: dict[str, np.ndarray] = {}
    offset = 0
    for i, entry in enumerate(manifest):
        epath = f"{path}/{i}"
        _expect(isinstance(entry, dict), "weight entry must be an object", epath)
        name, shape = entry.get("name"), entry.get("shape")
        _expect(isinstance(name, str) and name, "weight name must be a string", f"{epath}/name")
        _expect(name not in out, f"duplicate weight name {name!r}", f"{epath}/name")
        _expect(
            isinstance(shape, list) and shape and all(_is_int(d) and d >= 1 for d in shape),
            "weight shape must be a list of positive integers",
            f"{epath}/shape",
        )
        count = int(np.prod(shape))
        nbytes = count * 4
        if offset + nbytes > len(payload):
            raise FormatError(
                "length-mismatch",
                f"weight {name!r} needs {nbytes} bytes at offset {offset}, "
                f"payload has {len(payload)}",
            )
        out[name] = np.frombuffer(payload[offset:offset + nbytes], dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise FormatError(
            "length-mismatch",
            f"payload has {len(payload) - offset} trailing bytes beyond the manifest",
        )
    return out


def save_custom_block(defn: CustomBlockDef, path) -> None:
    weights = {f"custom/{defn.name}/{k}": t for k, t in (defn.saved_weights or {}).items()}
    manifest, payload = _weights_payload(weights)
    header = custom_def_to_doc(defn)
    header["format_version"] = FORMAT_VERSION
    header["payload"] = manifest
    _atomic_write(path, _build_container(MAGIC_BLOCK, header, payload))


def load_custom_block(path, registry: BlockRegistry | None = None) -> CustomBlockDef:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError("io-error", f"cannot read custom block: {exc}") from None
    registry = registry or BlockRegistry()
    try:
        header, payload = _parse_container(data, MAGIC_BLOCK)
        weights = _weights_from_payload(header.get("payload", []), payload, "/payload")
        return custom_def_from_doc(header, registry, weights, "")
    except FormatError:
        raise
    except Exception as exc:
        raise _violation(f"malformed custom block file: {exc}") from None


# ---------------------------------------------------------------------------
# project files


@dataclass
class ProjectFile:
    graph: Graph
    optimizer: OptimizerConfig
    dataset_path: str | None
    custom_blocks: list[CustomBlockDef]

    @property
    def registry(self) -> BlockRegistry:
        return self.graph.registry


def save_project(
    g: Graph,
    optimizer: OptimizerConfig,
    path,
    dataset_path: str | None = None,
) -> None:
    entries = collect_weights(g)
    custom_docs = []
    for defn in g.registry.custom_defs():
        custom_docs.append(custom_def_to_doc(defn))
        for key, t in (defn.saved_weights or {}).items():
            entries[f"custom/{defn.name}/{key}"] = t
    manifest, payload = _weights_payload(entries)
    header = {
        "format_version": FORMAT_VERSION,
        "graph": graph_to_doc(g),
        "optimizer": optimizer.to_dict(),
        "dataset_path": dataset_path,
        "custom_blocks": custom_docs,
        "weights": manifest,
    }
    _atomic_write(path, _build_container(MAGIC_PROJECT, header, payload))


def load_project(path) -> ProjectFile:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError("io-error", f"cannot read project: {exc}") from None
    try:
        header, payload = _parse_container(data, MAGIC_PROJECT)
        weights = _weights_from_payload(header.get("weights", []), payload, "/weights")
        registry = BlockRegistry()
        customs = []
        raw_customs = header.get("custom_blocks", [])
        _expect(isinstance(raw_customs, list), "custom_blocks must be a list", "/custom_blocks")
        for i, doc in enumerate(raw_customs):
            defn = custom_def_from_doc(doc, registry, weights, f"/custom_blocks/{i}")
            try:
                registry.register_custom(defn)
            except EngineError as exc:
                raise FormatError("pipeline-invalid", f"custom block {defn.name!r}: {exc.message}") from None
            customs.append(defn)
        graph = graph_from_doc(header.get("graph"), registry, weights)
        raw_opt = header.get("optimizer", {})
        _expect(isinstance(raw_opt, dict), "optimizer must be an object", "/optimizer")
        try:
            optimizer = OptimizerConfig.from_dict(raw_opt)
        except (TypeError, ValueError) as exc:
            raise _violation(f"optimizer config invalid: {exc}", "/optimizer") from None
        dataset_path = header.get("dataset_path")
        _expect(
            dataset_path is None or isinstance(dataset_path, str),
            "dataset_path must be a string or null",
            "/dataset_path",
        )
        return ProjectFile(graph, optimizer, dataset_path, customs)
    except FormatError:
        raise
    except Exception as exc:
        raise _violation(f"malformed project file: {exc}") from None


def resolve_dataset_path(project_path, dataset_path: str) -> Path:
    """Dataset paths in a project are relative to the project file's directory."""
    p = Path(dataset_path)
    return p if p.is_absolute() else Path(project_path).parent / p


def resolve_input_datasets(
    g: Graph, project_path, default_path: str | None
) -> tuple[dict[str, Dataset], list[str]]:
    """Bind one dataset per Input block: its own path param, else the project default.

    Returns the bindings plus the ids of Input blocks left without a dataset.
    """
    cache: dict[str, Dataset] = {}
    datasets: dict[str, Dataset] = {}
    missing: list[str] = []
    for bid, inst in flatten_graph(g).blocks.items():
        if inst.kind_id != "Input":
            continue
        raw = inst.params.get("dataset_path") or default_path
        if raw is None:
            missing.append(bid)
            continue
        resolved = str(resolve_dataset_path(project_path, raw))
        if resolved not in cache:
            cache[resolved] = read_dataset(resolved)
        datasets[bid] = cache[resolved]
    return datasets, missing
