"""Tensor diagrams for the core tensor and their contraction.

A diagram has K nodes. Every node mode ("slot") is either an internal edge to
another node or the outgoing leg of one core-tensor mode. A diagonal node (the
Lambda of a CP core) is stored as a length-r vector; all of its slots share a
single contraction label.
"""
from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np
import numpy.typing as npt

from tensor_completion.errors import DiagramError, DimensionMismatchError
from tensor_completion.logging_utils import ensure_trace_level
from tensor_completion.tensor_core import DenseTensor, Matrix, mode_product

ensure_trace_level()
logger = logging.getLogger("tensor_completion.tn_graph")

TopologyKind = Literal["single", "cp", "tt", "tr"]
TOPOLOGY_KINDS: tuple[str, ...] = ("single", "cp", "tt", "tr")
UNSUPPORTED_TOPOLOGY_KINDS: tuple[str, ...] = ("ht",)
_EINSUM_LABELS = string.ascii_letters


@dataclass(frozen=True)
class Slot:
    kind: Literal["internal", "outgoing"]
    ref: int

    @classmethod
    def edge(cls, edge_id: int) -> "Slot":
        return cls("internal", edge_id)

    @classmethod
    def mode(cls, mode: int) -> "Slot":
        return cls("outgoing", mode)


@dataclass(frozen=True)
class InternalEdge:
    node_a: int
    slot_a: int
    node_b: int
    slot_b: int
    weight: int


@dataclass(frozen=True)
class OutgoingLeg:
    node: int
    slot: int
    weight: int


@dataclass(frozen=True)
class TensorDiagram:
    nodes: tuple[tuple[Slot, ...], ...]
    edges: tuple[InternalEdge, ...]
    outgoing: tuple[OutgoingLeg, ...]
    diagonal: frozenset[int] = frozenset()
    kind: str | None = None

    @property
    def order(self) -> int:
        return len(self.outgoing)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def outgoing_weights(self) -> tuple[int, ...]:
        return tuple(leg.weight for leg in self.outgoing)

    @property
    def edge_weights(self) -> tuple[int, ...]:
        return tuple(edge.weight for edge in self.edges)

    @property
    def internal_weights(self) -> tuple[int, ...]:
        """The w vector of `make_topology`; CP edges all share the one rank."""
        if self.kind == "cp" and self.edges:
            return (self.edges[0].weight,)
        return self.edge_weights

    def slot_size(self, k: int, m: int) -> int:
        slot = self.nodes[k][m]
        if slot.kind == "outgoing":
            return self.outgoing[slot.ref].weight
        return self.edges[slot.ref].weight

    def node_shape(self, k: int) -> tuple[int, ...]:
        shape = tuple(self.slot_size(k, m) for m in range(len(self.nodes[k])))
        if k in self.diagonal:
            return shape[:1]
        return shape

    def with_outgoing_weights(self, weights: Sequence[int]) -> "TensorDiagram":
        if len(weights) != self.order:
            raise DiagramError(f"expected {self.order} outgoing weights, got {len(weights)}")
        legs = tuple(replace(leg, weight=int(weight)) for leg, weight in zip(self.outgoing, weights))
        return replace(self, outgoing=legs)

    def leg(self, n: int) -> OutgoingLeg:
        """(k_n, m_n) and d_n for tensor mode n."""
        return self.outgoing[n]


@dataclass(frozen=True, eq=False)
class NodeTensorSet:
    tensors: tuple[DenseTensor, ...]
    diagonal: frozenset[int] = frozenset()

    def __len__(self) -> int:
        return len(self.tensors)

    def __getitem__(self, k: int) -> DenseTensor:
        return self.tensors[k]

    def replace(self, k: int, tensor: DenseTensor) -> "NodeTensorSet":
        tensors = list(self.tensors)
        tensors[k] = np.asarray(tensor, dtype=np.float64)
        return NodeTensorSet(tuple(tensors), self.diagonal)

    def shapes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tensor.shape for tensor in self.tensors)


def _positive_weights(values: Sequence[int], name: str) -> tuple[int, ...]:
    weights = tuple(int(value) for value in values)
    if any(weight < 1 for weight in weights):
        raise DiagramError(f"{name} must be positive, got {weights}")
    return weights


def make_topology(
    kind: str,
    order: int,
    internal_weights: Sequence[int] | int | None,
    outgoing_weights: Sequence[int],
) -> TensorDiagram:
    if kind in UNSUPPORTED_TOPOLOGY_KINDS:
        raise DiagramError(f"topology {kind!r} is not implemented")
    if kind not in TOPOLOGY_KINDS:
        raise DiagramError(f"unknown topology {kind!r}; expected one of {', '.join(TOPOLOGY_KINDS)}")
    if order < 1:
        raise DiagramError(f"tensor order must be positive, got {order}")
    if isinstance(internal_weights, int):
        internal_weights = (internal_weights,)
    w = _positive_weights(internal_weights or (), "internal weights")
    d = _positive_weights(outgoing_weights, "outgoing weights")
    if len(d) != order:
        raise DiagramError(f"expected {order} outgoing weights, got {len(d)}")
    expected = {"single": 0, "cp": 1, "tt": order - 1, "tr": order}[kind]
    if len(w) != expected:
        raise DiagramError(f"{kind} topology of order {order} needs {expected} internal weights, got {len(w)}")

    if kind == "single":
        return TensorDiagram(
            nodes=(tuple(Slot.mode(n) for n in range(order)),),
            edges=(),
            outgoing=tuple(OutgoingLeg(0, n, d[n]) for n in range(order)),
            kind=kind,
        )

    if kind == "cp":
        rank = w[0]
        # B^(n) is node n with slots (mode n, edge n); Lambda is node N, last
        nodes = [(Slot.mode(n), Slot.edge(n)) for n in range(order)]
        nodes.append(tuple(Slot.edge(n) for n in range(order)))
        return TensorDiagram(
            nodes=tuple(nodes),
            edges=tuple(InternalEdge(n, 1, order, n, rank) for n in range(order)),
            outgoing=tuple(OutgoingLeg(n, 0, d[n]) for n in range(order)),
            diagonal=frozenset({order}),
            kind=kind,
        )

    if kind == "tt":
        if order == 1:
            return make_topology("single", 1, (), d)
        nodes = []
        outgoing = []
        for n in range(order):
            slots: list[Slot] = []
            if n > 0:
                slots.append(Slot.edge(n - 1))
            slots.append(Slot.mode(n))
            outgoing.append(OutgoingLeg(n, len(slots) - 1, d[n]))
            if n < order - 1:
                slots.append(Slot.edge(n))
            nodes.append(tuple(slots))
        edges = tuple(
            InternalEdge(n, len(nodes[n]) - 1, n + 1, 0, w[n]) for n in range(order - 1)
        )
        return TensorDiagram(tuple(nodes), edges, tuple(outgoing), kind=kind)

    # tensor ring: node n has slots (edge n-1, mode n, edge n); edge N-1 closes N-1 -> 0
    if order == 1:
        raise DiagramError("a tensor ring needs at least two modes")
    nodes = tuple(
        (Slot.edge((n - 1) % order), Slot.mode(n), Slot.edge(n)) for n in range(order)
    )
    edges = tuple(InternalEdge(n, 2, (n + 1) % order, 0, w[n]) for n in range(order))
    outgoing = tuple(OutgoingLeg(n, 1, d[n]) for n in range(order))
    return TensorDiagram(nodes, edges, outgoing, kind=kind)


def validate(diagram: TensorDiagram, nodes: NodeTensorSet | None = None) -> list[str]:
    violations: list[str] = []
    node_count = diagram.node_count
    if node_count == 0:
        violations.append("diagram has no nodes")

    seen_modes: dict[int, tuple[int, int]] = {}
    edge_endpoints: dict[int, list[tuple[int, int]]] = {}
    for k, slots in enumerate(diagram.nodes):
        for m, slot in enumerate(slots):
            if slot.kind == "outgoing":
                if slot.ref in seen_modes:
                    violations.append(f"duplicate outgoing mode {slot.ref + 1}")
                    continue
                seen_modes[slot.ref] = (k, m)
            elif slot.kind == "internal":
                edge_endpoints.setdefault(slot.ref, []).append((k, m))
            else:
                violations.append(f"node {k + 1} slot {m + 1} has unknown kind {slot.kind!r}")

    if sorted(seen_modes) != list(range(diagram.order)):
        missing = sorted(set(range(diagram.order)) - set(seen_modes))
        extra = sorted(set(seen_modes) - set(range(diagram.order)))
        if missing:
            violations.append(f"outgoing modes without a node slot: {[n + 1 for n in missing]}")
        if extra:
            violations.append(f"node slots reference unknown outgoing modes: {[n + 1 for n in extra]}")
    for n, leg in enumerate(diagram.outgoing):
        if leg.weight < 1:
            violations.append(f"outgoing mode {n + 1} has nonpositive weight {leg.weight}")
        if seen_modes.get(n, (leg.node, leg.slot)) != (leg.node, leg.slot):
            violations.append(f"outgoing mode {n + 1} assignment disagrees with node signatures")

    for e, edge in enumerate(diagram.edges):
        if edge.weight < 1:
            violations.append(f"edge {e + 1} has nonpositive weight {edge.weight}")
        endpoints = [(edge.node_a, edge.slot_a), (edge.node_b, edge.slot_b)]
        for node, slot in endpoints:
            if not 0 <= node < node_count or not 0 <= slot < len(diagram.nodes[node]):
                violations.append(f"edge {e + 1} endpoint (node {node + 1}, slot {slot + 1}) does not exist")
        if sorted(edge_endpoints.get(e, [])) != sorted(endpoints):
            violations.append(f"edge {e + 1} endpoints disagree with node signatures")
    for e in edge_endpoints:
        if not 0 <= e < len(diagram.edges):
            violations.append(f"node slot references unknown edge {e + 1}")

    for k in diagram.diagonal:
        if not 0 <= k < node_count:
            violations.append(f"diagonal node {k + 1} does not exist")
            continue
        slots = diagram.nodes[k]
        if any(slot.kind != "internal" for slot in slots):
            violations.append(f"diagonal node {k + 1} must only carry internal edges")
        elif len({diagram.edges[slot.ref].weight for slot in slots if slot.ref < len(diagram.edges)}) > 1:
            violations.append(f"diagonal node {k + 1} edges must share one weight")

    if nodes is not None and not violations:
        if len(nodes) != node_count:
            violations.append(f"expected {node_count} node tensors, got {len(nodes)}")
        else:
            for k in range(node_count):
                expected = diagram.node_shape(k)
                if tuple(nodes[k].shape) != expected:
                    violations.append(
                        f"node {k + 1} has shape {tuple(nodes[k].shape)}, diagram expects {expected}"
                    )
    return violations


def _require_valid(diagram: TensorDiagram, nodes: NodeTensorSet | None = None) -> None:
    violations = validate(diagram, nodes)
    if violations:
        raise DiagramError("invalid tensor diagram: " + "; ".join(violations), violations=violations)


def einsum_labels(diagram: TensorDiagram) -> tuple[list[list[int]], list[int]]:
    """Integer contraction labels per node and the output labels (modes 1..N)."""
    parent = list(range(len(diagram.edges)))

    def find(e: int) -> int:
        while parent[e] != e:
            parent[e] = parent[parent[e]]
            e = parent[e]
        return e

    for k in diagram.diagonal:
        refs = [slot.ref for slot in diagram.nodes[k]]
        for ref in refs[1:]:
            parent[find(ref)] = find(refs[0])

    edge_count = len(diagram.edges)
    node_labels: list[list[int]] = []
    for k, slots in enumerate(diagram.nodes):
        labels = [find(slot.ref) if slot.kind == "internal" else edge_count + slot.ref for slot in slots]
        node_labels.append(labels[:1] if k in diagram.diagonal else labels)
    output = [edge_count + n for n in range(diagram.order)]
    return node_labels, output


def _letters(labels: Sequence[int]) -> str:
    return "".join(_EINSUM_LABELS[label] for label in labels)


def einsum_expression(operand_labels: Sequence[Sequence[int]], output: Sequence[int]) -> str:
    used = {label for labels in operand_labels for label in labels} | set(output)
    if used and max(used) >= len(_EINSUM_LABELS):
        raise DiagramError(f"diagram needs more than {len(_EINSUM_LABELS)} contraction labels")
    return ",".join(_letters(labels) for labels in operand_labels) + "->" + _letters(output)


def contract(
    diagram: TensorDiagram,
    nodes: NodeTensorSet,
    optimize: bool | str = "greedy",
) -> DenseTensor:
    """Dense core G with outgoing modes in order 1..N.

    The default greedy path eliminates the cheapest pair first; the result does
    not depend on the path.
    """
    _require_valid(diagram, nodes)
    node_labels, output = einsum_labels(diagram)
    if diagram.node_count == 1 and not diagram.diagonal:
        order = [node_labels[0].index(label) for label in output]
        return np.transpose(np.asarray(nodes[0], dtype=np.float64), order).copy()
    expression = einsum_expression(node_labels, output)
    return np.einsum(expression, *nodes.tensors, optimize=optimize)


def node_mode_update(nodes: NodeTensorSet, k: int, m: int, matrix: Matrix) -> NodeTensorSet:
    """Replaces node k by its mode-m product with `matrix`."""
    matrix = np.asarray(matrix, dtype=np.float64)
    tensor = nodes[k]
    if k in nodes.diagonal:
        if matrix.shape != (tensor.shape[0], tensor.shape[0]) or np.count_nonzero(
            matrix - np.diag(np.diag(matrix))
        ):
            raise DiagramError("a diagonal node only absorbs square diagonal matrices")
        return nodes.replace(k, tensor * np.diag(matrix))
    if not 0 <= m < tensor.ndim:
        raise DimensionMismatchError(f"node {k + 1} has no slot {m + 1}")
    return nodes.replace(k, mode_product(tensor, matrix, m))


def random_nodes(diagram: TensorDiagram, rng: np.random.Generator) -> NodeTensorSet:
    """Gaussian node tensors; CP columns unit length with Lambda = 1."""
    tensors: list[DenseTensor] = []
    for k in range(diagram.node_count):
        shape = diagram.node_shape(k)
        if k in diagram.diagonal:
            tensors.append(np.ones(shape))
            continue
        tensor = rng.standard_normal(shape)
        if diagram.kind == "cp":
            tensor /= np.linalg.norm(tensor, axis=0, keepdims=True)
        else:
            tensor /= np.sqrt(max(1, tensor.size // max(1, shape[0])))
        tensors.append(tensor)
    return NodeTensorSet(tuple(tensors), diagram.diagonal)


def node_set_from(diagram: TensorDiagram, tensors: Sequence[DenseTensor]) -> NodeTensorSet:
    nodes = NodeTensorSet(tuple(np.asarray(t, dtype=np.float64) for t in tensors), diagram.diagonal)
    _require_valid(diagram, nodes)
    return nodes


def diagram_to_dict(diagram: TensorDiagram) -> dict[str, Any]:
    payload: dict[str, Any] = {}
    if diagram.kind is not None:
        payload["kind"] = diagram.kind
    payload["nodes"] = [
        {
            "id": k + 1,
            "diagonal": k in diagram.diagonal,
            "slots": [
                {"edge": slot.ref + 1} if slot.kind == "internal" else {"mode": slot.ref + 1}
                for slot in slots
            ],
        }
        for k, slots in enumerate(diagram.nodes)
    ]
    payload["edges"] = [
        {
            "id": e + 1,
            "a": [edge.node_a + 1, edge.slot_a + 1],
            "b": [edge.node_b + 1, edge.slot_b + 1],
            "weight": edge.weight,
        }
        for e, edge in enumerate(diagram.edges)
    ]
    payload["outgoing"] = [
        {"mode": n + 1, "node": leg.node + 1, "slot": leg.slot + 1, "weight": leg.weight}
        for n, leg in enumerate(diagram.outgoing)
    ]
    return payload


def diagram_from_dict(payload: dict[str, Any]) -> TensorDiagram:
    if "nodes" not in payload:
        kind = payload.get("kind")
        if kind is None:
            raise DiagramError("diagram needs either 'kind' or explicit 'nodes'/'edges'/'outgoing'")
        outgoing_weights = payload.get("outgoing_weights")
        if outgoing_weights is None:
            raise DiagramError("a 'kind' diagram needs 'outgoing_weights'")
        return make_topology(
            kind,
            len(outgoing_weights),
            payload.get("internal_weights", ()),
            outgoing_weights,
        )
    try:
        nodes = sorted(payload["nodes"], key=lambda node: node["id"])
        edges = sorted(payload.get("edges", []), key=lambda edge: edge["id"])
        legs = sorted(payload["outgoing"], key=lambda leg: leg["mode"])
        diagram = TensorDiagram(
            nodes=tuple(
                tuple(
                    Slot.edge(slot["edge"] - 1) if "edge" in slot else Slot.mode(slot["mode"] - 1)
                    for slot in node["slots"]
                )
                for node in nodes
            ),
            edges=tuple(
                InternalEdge(
                    edge["a"][0] - 1, edge["a"][1] - 1, edge["b"][0] - 1, edge["b"][1] - 1, int(edge["weight"])
                )
                for edge in edges
            ),
            outgoing=tuple(
                OutgoingLeg(leg["node"] - 1, leg["slot"] - 1, int(leg["weight"])) for leg in legs
            ),
            diagonal=frozenset(node["id"] - 1 for node in nodes if node.get("diagonal")),
            kind=payload.get("kind"),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise DiagramError(f"malformed diagram description: {exc}") from exc
    return diagram


def dump_diagram(diagram: TensorDiagram) -> str:
    return json.dumps(diagram_to_dict(diagram), indent=2) + "\n"


def load_diagram(text: str) -> TensorDiagram:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DiagramError(f"diagram JSON is invalid: {exc}") from exc
    if not isinstance(payload, dict):
        raise DiagramError("diagram JSON must be an object")
    return diagram_from_dict(payload)


def read_diagram(path: str | Path) -> TensorDiagram:
    return load_diagram(Path(path).read_text(encoding="utf-8"))


def write_diagram(path: str | Path, diagram: TensorDiagram) -> Path:
    path = Path(path)
    path.write_text(dump_diagram(diagram), encoding="utf-8")
    return path


@dataclass(frozen=True, eq=False)
class NodeEnvironment:
    """Contraction of every node except k.

    `tensor` carries the internal slots of node k (one shared axis for a
    diagonal node) followed by the outgoing modes not on node k, ascending.
    """

    k: int
    tensor: DenseTensor
    inner_slots: tuple[int, ...]
    own_slots: tuple[int, ...]
    own_modes: tuple[int, ...]
    free_modes: tuple[int, ...]
    expression: str
    adjoint_expression: str

    @property
    def inner_shape(self) -> tuple[int, ...]:
        return tuple(self.tensor.shape[: len(self.inner_slots)])

    def core(self, node_tensor: DenseTensor) -> DenseTensor:
        """Dense core with node k replaced by `node_tensor`."""
        return np.einsum(self.expression, node_tensor, self.tensor)

    def pull_back(self, core_gradient: DenseTensor) -> DenseTensor:
        """Adjoint of `core`: maps a core-shaped tensor onto node k's shape."""
        return np.einsum(self.adjoint_expression, core_gradient, self.tensor)

    def assemble(self, block: npt.ArrayLike, own_dims: Sequence[int]) -> DenseTensor:
        """Node tensor from values ordered (own outgoing slots, inner slots), C order."""
        block = np.asarray(block, dtype=np.float64)
        block = block.reshape(tuple(own_dims) + self.inner_shape)
        return np.moveaxis(block, range(block.ndim), self.own_slots + self.inner_slots)


def environment(
    diagram: TensorDiagram,
    nodes: NodeTensorSet,
    k: int,
    optimize: bool | str = "greedy",
) -> NodeEnvironment:
    _require_valid(diagram, nodes)
    node_labels, output = einsum_labels(diagram)
    edge_count = len(diagram.edges)
    own = node_labels[k]
    slots = diagram.nodes[k]
    if k in diagram.diagonal:
        inner_slots: tuple[int, ...] = (0,)
        inner_labels = own[:1]
        own_slots: tuple[int, ...] = ()
        own_modes: tuple[int, ...] = ()
    else:
        inner_slots = tuple(m for m, slot in enumerate(slots) if slot.kind == "internal")
        inner_labels = [own[m] for m in inner_slots]
        own_slots = tuple(m for m, slot in enumerate(slots) if slot.kind == "outgoing")
        own_modes = tuple(slot.ref for slot in slots if slot.kind == "outgoing")
    free_modes = tuple(n for n in range(diagram.order) if n not in own_modes)
    env_labels = list(inner_labels) + [edge_count + n for n in free_modes]

    others = [j for j in range(diagram.node_count) if j != k]
    if others:
        tensor = np.einsum(
            einsum_expression([node_labels[j] for j in others], env_labels),
            *(nodes[j] for j in others),
            optimize=optimize,
        )
    else:
        tensor = np.ones(())
    expression = einsum_expression([own, env_labels], output)
    adjoint_expression = einsum_expression([output, env_labels], own)
    return NodeEnvironment(
        k, tensor, inner_slots, own_slots, own_modes, free_modes, expression, adjoint_expression
    )


def cp_lambda_node(diagram: TensorDiagram) -> int:
    if diagram.kind != "cp" or len(diagram.diagonal) != 1:
        raise DiagramError("diagram is not a CP core")
    return next(iter(diagram.diagonal))


def normalize_cp_columns(diagram: TensorDiagram, nodes: NodeTensorSet, k: int) -> tuple[NodeTensorSet, int]:
    """Rescales B^(k) to unit columns, absorbing the norms into Lambda.

    Returns the new node set and the number of zero columns, which are left
    as they are with gamma_i = 1.
    """
    lam = cp_lambda_node(diagram)
    if k == lam:
        return nodes, 0
    gamma = np.linalg.norm(nodes[k], axis=0)
    zero = gamma == 0.0
    gamma = np.where(zero, 1.0, gamma)
    nodes = nodes.replace(k, nodes[k] / gamma)
    nodes = node_mode_update(nodes, lam, 0, np.diag(gamma))
    return nodes, int(np.count_nonzero(zero))
