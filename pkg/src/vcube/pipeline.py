"""
Virtual product declarations: YAML parsing, validation and DAG utilities.

A declaration looks like::

    name: ndvi
    sensor: OPTICAL
    nodes:
      - id: n1
        op: band_index
        params: { index: NDVI }
        inputs: [band:B08, band:B04]
    outputs:
      ndvi: n1

Inputs are either ``band:<NAME>`` (a band of the source scene) or
``node:<id>``.  Parsing either returns a fully checked :class:`ProductSpec`
or raises a :class:`~vcube.errors.SpecError` subclass; it never lets any
other exception escape.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import yaml

from .errors import (ArityMismatch, BadParam, CycleDetected, DanglingRef, SpecError,
                     SpecSyntaxError, TemporalMismatch, UnknownOp, UnknownParam)
from .ops import REGISTRY
from .sensors import SENSOR_BANDS, Sensor

BAND_PREFIX = "band:"
NODE_PREFIX = "node:"

SCENE = "scene"        # evaluated once per source scene
AGGREGATE = "aggregate"  # evaluated once over the whole time stack


@dataclass(frozen=True)
class OpNode:
    id: str
    op: str
    params: dict = field(default_factory=dict)
    inputs: tuple[str, ...] = ()

    def node_inputs(self) -> list[str]:
        return [ref[len(NODE_PREFIX):] for ref in self.inputs if ref.startswith(NODE_PREFIX)]

    def band_inputs(self) -> list[str]:
        return [ref[len(BAND_PREFIX):] for ref in self.inputs if ref.startswith(BAND_PREFIX)]

    def descriptor(self) -> dict:
        """Canonical, id-free description used in cache keys."""
        return {"op": self.op, "params": {k: self.params[k] for k in sorted(self.params)}}


@dataclass(frozen=True)
class ProductSpec:
    name: str
    sensor: Sensor
    nodes: tuple[OpNode, ...]
    outputs: dict

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "outputs", {k: self.outputs[k] for k in sorted(self.outputs)})

    @property
    def node_map(self) -> dict[str, OpNode]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id: str) -> OpNode:
        return self.node_map[node_id]

    def contexts(self) -> dict[str, str]:
        """Evaluation context (SCENE or AGGREGATE) of every node."""
        return _contexts(self)

    @property
    def is_temporal(self) -> bool:
        return any(REGISTRY[n.op].temporal for n in self.nodes)

    def bands(self) -> list[str]:
        return sorted({b for n in self.nodes for b in n.band_inputs()})

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "sensor": self.sensor.value,
            "nodes": [{"id": n.id, "op": n.op,
                       "params": {k: n.params[k] for k in sorted(n.params)},
                       "inputs": list(n.inputs)} for n in self.nodes],
            "outputs": dict(self.outputs),
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# --- parsing ---------------------------------------------------------------------

class _LineDict(dict):
    line: int | None = None


class _LineLoader(yaml.SafeLoader):
    """Safe loader that remembers the source line of every mapping."""


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict()
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        try:
            hash(key)
        except TypeError:
            raise SpecSyntaxError("unhashable mapping key", key_node.start_mark.line + 1)
        if key in out:
            raise SpecSyntaxError(f"duplicate key {key!r}", key_node.start_mark.line + 1)
        out[key] = loader.construct_object(value_node, deep=True)
    out.line = node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _line(obj) -> int | None:
    return getattr(obj, "line", None)


def _require(cond: bool, message: str, where=None) -> None:
    if not cond:
        raise SpecSyntaxError(message, _line(where))


def parse_spec(text: str | bytes) -> ProductSpec:
    """Parse and check a product declaration."""
    try:
        return _parse(text)
    except SpecError:
        raise
    except RecursionError:
        raise SpecSyntaxError("document nested too deeply") from None
    except Exception as exc:  # parsing is total: anything unexpected is a syntax error
        raise SpecSyntaxError(f"{type(exc).__name__}: {exc}") from exc


def _parse(text: str | bytes) -> ProductSpec:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SpecSyntaxError(f"document is not UTF-8: {exc}") from None
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise SpecSyntaxError(exc.problem or str(exc), mark.line + 1 if mark else None) from None
    except yaml.YAMLError as exc:
        raise SpecSyntaxError(str(exc)) from None

    _require(isinstance(doc, dict), "document must be a mapping")
    extra = set(doc) - {"name", "sensor", "nodes", "outputs"}
    _require(not extra, f"unknown top-level keys {sorted(map(str, extra))}", doc)
    for key in ("name", "sensor", "nodes", "outputs"):
        _require(key in doc, f"missing top-level key {key!r}", doc)
    name = doc["name"]
    _require(isinstance(name, str) and name != "", "name must be a non-empty string", doc)
    try:
        sensor = Sensor(doc["sensor"])
    except (ValueError, TypeError):
        raise SpecSyntaxError(f"sensor must be one of {[s.value for s in Sensor]}",
                              _line(doc)) from None
    raw_nodes = doc["nodes"]
    _require(isinstance(raw_nodes, list) and raw_nodes, "nodes must be a non-empty list", doc)
    outputs = doc["outputs"]
    _require(isinstance(outputs, dict) and outputs, "outputs must be a non-empty mapping", doc)

    nodes: dict[str, OpNode] = {}
    for raw in raw_nodes:
        node = _parse_node(raw, sensor, doc)
        _require(node.id not in nodes, f"duplicate node id {node.id!r}", raw)
        nodes[node.id] = node

    for node in nodes.values():
        for ref in node.node_inputs():
            if ref not in nodes:
                raise DanglingRef(f"node {node.id!r} references unknown node {ref!r}")
    clean_outputs = {}
    for band, ref in outputs.items():
        _require(isinstance(band, str) and band != "", "output names must be strings", outputs)
        _require(isinstance(ref, str), f"output {band!r} must name a node id", outputs)
        if ref.startswith(NODE_PREFIX):
            ref = ref[len(NODE_PREFIX):]
        if ref not in nodes:
            raise DanglingRef(f"output {band!r} references unknown node {ref!r}")
        clean_outputs[band] = ref

    cycle = find_cycle(nodes)
    if cycle:
        raise CycleDetected(cycle)
    spec = ProductSpec(name, sensor, tuple(nodes.values()), clean_outputs)
    _contexts(spec)  # raises TemporalMismatch
    return spec


def _parse_node(raw, sensor: Sensor, doc) -> OpNode:
    _require(isinstance(raw, dict), "each node must be a mapping", doc)
    extra = set(raw) - {"id", "op", "params", "inputs"}
    _require(not extra, f"unknown node keys {sorted(map(str, extra))}", raw)
    node_id, op = raw.get("id"), raw.get("op")
    _require(isinstance(node_id, str) and node_id != "", "node id must be a non-empty string", raw)
    _require(":" not in node_id and not any(c.isspace() for c in node_id),
             f"node id {node_id!r} may not contain ':' or whitespace", raw)
    _require(isinstance(op, str), f"node {node_id!r}: op must be a string", raw)
    if op not in REGISTRY:
        raise UnknownOp(f"node {node_id!r}: unknown op {op!r}")
    sig = REGISTRY[op]

    params = raw.get("params") or {}
    _require(isinstance(params, dict), f"node {node_id!r}: params must be a mapping", raw)
    for key, val in params.items():
        if not isinstance(key, str):
            raise UnknownParam(f"node {node_id!r}: parameter names must be strings")
        if not isinstance(val, (bool, int, float, str)):
            raise BadParam(f"node {node_id!r}: parameter {key!r} must be a scalar")
    try:
        resolved = sig.resolve_params(dict(params))
    except SpecError as exc:
        raise type(exc)(f"node {node_id!r}: {exc}") from None

    inputs = raw.get("inputs", [])
    _require(isinstance(inputs, list) and all(isinstance(i, str) for i in inputs),
             f"node {node_id!r}: inputs must be a list of strings", raw)
    roles = sig.roles(resolved)
    if len(inputs) != len(roles):
        raise ArityMismatch(f"node {node_id!r}: {op} takes {len(roles)} inputs "
                            f"({', '.join(roles)}), got {len(inputs)}")
    for ref in inputs:
        if ref.startswith(BAND_PREFIX):
            band = ref[len(BAND_PREFIX):]
            if band not in SENSOR_BANDS[sensor]:
                raise DanglingRef(f"node {node_id!r}: {sensor.value} scenes have no band {band!r}")
        elif ref.startswith(NODE_PREFIX):
            _require(len(ref) > len(NODE_PREFIX), f"node {node_id!r}: empty node reference", raw)
        else:
            raise SpecSyntaxError(f"node {node_id!r}: input {ref!r} must start with "
                                  f"'band:' or 'node:'", _line(raw))
    return OpNode(node_id, op, resolved, tuple(inputs))


def find_cycle(nodes: dict[str, OpNode]) -> list[str] | None:
    """Return the node ids along one dependency cycle, or None for a DAG."""
    white, grey, black = 0, 1, 2
    color = {n: white for n in nodes}
    for start in sorted(nodes):
        if color[start] != white:
            continue
        path = [start]
        color[start] = grey
        stack = [iter(sorted(set(nodes[start].node_inputs())))]
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                stack.pop()
                color[path.pop()] = black
                continue
            if color[nxt] == grey:
                return path[path.index(nxt):]
            if color[nxt] == white:
                color[nxt] = grey
                path.append(nxt)
                stack.append(iter(sorted(set(nodes[nxt].node_inputs()))))
    return None


def _contexts(spec: ProductSpec) -> dict[str, str]:
    ctx: dict[str, str] = {}
    nodes = spec.node_map
    for node_id in topo_order(spec):
        node = nodes[node_id]
        in_ctx = {SCENE if ref.startswith(BAND_PREFIX) else ctx[ref[len(NODE_PREFIX):]]
                  for ref in node.inputs}
        if REGISTRY[node.op].temporal:
            if AGGREGATE in in_ctx:
                raise TemporalMismatch(f"node {node_id!r}: {node.op} inputs must be per-scene")
            ctx[node_id] = AGGREGATE
        else:
            if len(in_ctx) > 1:
                raise TemporalMismatch(
                    f"node {node_id!r} mixes per-scene and time-aggregated inputs")
            ctx[node_id] = in_ctx.pop() if in_ctx else SCENE
    out_ctx = {ctx[ref] for ref in spec.outputs.values()}
    if len(out_ctx) > 1:
        raise TemporalMismatch("outputs mix per-scene and time-aggregated nodes")
    return ctx


def serialize_spec(spec: ProductSpec) -> str:
    """Canonical YAML form: nodes sorted by id, params sorted by name."""
    return yaml.safe_dump(spec.to_dict(), sort_keys=False, default_flow_style=None)


# --- DAG utilities ---------------------------------------------------------------

def reachable(spec: ProductSpec) -> set[str]:
    nodes = spec.node_map
    seen: set[str] = set()
    todo = list(spec.outputs.values())
    while todo:
        n = todo.pop()
        if n in seen:
            continue
        seen.add(n)
        todo.extend(nodes[n].node_inputs())
    return seen


def validate(spec: ProductSpec) -> list[str]:
    """Warnings for a parsed spec: nodes no output depends on."""
    live = reachable(spec)
    return [f"node {n.id!r} ({n.op}) is not used by any output and will be pruned"
            for n in spec.nodes if n.id not in live]


def prune(spec: ProductSpec) -> ProductSpec:
    live = reachable(spec)
    if len(live) == len(spec.nodes):
        return spec
    return ProductSpec(spec.name, spec.sensor,
                       tuple(n for n in spec.nodes if n.id in live), spec.outputs)


def topo_order(spec: ProductSpec) -> list[str]:
    """Dependencies first; among ready nodes the smallest id goes first."""
    nodes = spec.node_map
    indeg = {n: len(set(nodes[n].node_inputs())) for n in nodes}
    users: dict[str, list[str]] = {n: [] for n in nodes}
    for n in nodes:
        for dep in set(nodes[n].node_inputs()):
            users[dep].append(n)
    ready = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for u in users[n]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(ready, u)
    if len(order) != len(nodes):
        raise CycleDetected(find_cycle(nodes) or sorted(set(nodes) - set(order)))
    return order


def render_dot(spec: ProductSpec) -> str:
    """Graphviz digraph of the node graph; band inputs are not drawn."""
    lines = [f"digraph {json.dumps(spec.name)} {{", "  rankdir=LR;"]
    for n in spec.nodes:
        lines.append(f"  {json.dumps(n.id)} [label={json.dumps(n.id + chr(10) + n.op)}];")
    for n in spec.nodes:
        for dep in sorted(set(n.node_inputs())):
            lines.append(f"  {json.dumps(dep)} -> {json.dumps(n.id)};")
    lines.append("}")
    return "\n".join(lines) + "\n"
