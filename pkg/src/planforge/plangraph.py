"""Hybrid room-boundary graph construction.

Boundary nodes sit on the envelope: one corner node per polygon vertex, plus
edge nodes subdividing any edge longer than the metric spacing, plus the
entrance inserted on its edge (or flagged on a coincident node).  Room nodes
carry the placed centers.  Each room node links to its nearest boundary nodes
and nearest other rooms; all edges are stored directed with the reverse
direction added so attention flows both ways.

Node features are 8-D: position / 255 followed by a one-hot over
{bed, rest, kit, bal, corner, edge}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .synthdata import ROOM_TYPES

KIND_ORDER = (*ROOM_TYPES, "corner", "edge")
FEATURE_DIM = 8
DEFAULT_SPACING_M = 5.0
DOOR_NODE_TOLERANCE_PX = 2.0
K_BOUNDARY = 5
K_ROOM = 2


class GraphError(ValueError):
    pass


@dataclass
class GraphNode:
    id: int
    pos: np.ndarray            # (2,) float, canvas px
    kind: str                  # room type, "corner", or "edge"
    is_entrance: bool = False  # metadata only; never part of the features


@dataclass
class HybridGraph:
    nodes: list
    edges: list                # chosen directed (src, dst) pairs, sorted
    n_boundary: int

    @property
    def room_ids(self):
        return [n.id for n in self.nodes if n.kind in ROOM_TYPES]

    @property
    def boundary_ids(self):
        return [n.id for n in self.nodes if n.kind not in ROOM_TYPES]

    def message_edges(self) -> list:
        """Edge set for attention: chosen edges plus their reverses, so every
        neighborhood sum sees both directions."""
        sym = set(self.edges)
        sym.update((b, a) for a, b in self.edges)
        return sorted(sym)

    def in_neighbors(self):
        """Per-node in-neighbor lists over the symmetrized edges, ordered by
        neighbor position (id-permutation invariant for exact equivariance)."""
        incoming = {n.id: [] for n in self.nodes}
        for src, dst in self.message_edges():
            incoming[dst].append(src)
        ordered = {}
        for nid, srcs in incoming.items():
            ordered[nid] = sorted(
                srcs, key=lambda s: (self.nodes[s].pos[0], self.nodes[s].pos[1],
                                     self.nodes[s].kind))
        return ordered

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "pos": [float(n.pos[0]), float(n.pos[1])],
                    "kind": n.kind,
                    "is_entrance": n.is_entrance,
                }
                for n in self.nodes
            ],
            "edges": [[int(a), int(b)] for a, b in self.edges],
            "features": node_features(self).tolist(),
        }


def build_boundary_nodes(envelope, door, spacing_m: float = DEFAULT_SPACING_M,
                         scale_m_per_px: float = 0.1):
    """Ordered boundary nodes along the perimeter, entrance included.

    Corner nodes at every polygon vertex; edges longer than ``spacing_m`` are
    subdivided at uniform intervals with kind="edge" nodes.  The door becomes
    an edge node at its boundary foot unless it coincides (within 2 px) with
    an existing node, which is then flagged as the entrance.
    """
    envelope = geo.ensure_clockwise(envelope)
    door = np.asarray(door, dtype=float)
    edge_idx, foot, dist = geo.project_to_boundary(door, envelope)
    if dist > DOOR_NODE_TOLERANCE_PX:
        raise GraphError("door lies farther than 2 px from the envelope boundary")

    spacing_px = spacing_m / scale_m_per_px
    n = len(envelope)
    entries = []  # (edge_index, t_along_edge, pos, kind)
    for i in range(n):
        a, b = envelope[i], envelope[(i + 1) % n]
        entries.append((i, 0.0, a.copy(), "corner"))
        length = float(np.hypot(*(b - a)))
        if length > spacing_px:
            n_seg = int(np.ceil(length / spacing_px))
            for k in range(1, n_seg):
                t = k / n_seg
                entries.append((i, t, a + t * (b - a), "edge"))

    # entrance: flag a coincident node or insert at the boundary foot
    door_entry = None
    for entry in entries:
        if np.hypot(*(entry[2] - foot)) <= DOOR_NODE_TOLERANCE_PX:
            door_entry = entry
            break
    if door_entry is None:
        a, b = envelope[edge_idx], envelope[(edge_idx + 1) % n]
        edge_len2 = float((b - a) @ (b - a))
        t = 0.0 if edge_len2 == 0 else float((foot - a) @ (b - a) / edge_len2)
        door_entry = (edge_idx, t, foot.copy(), "edge")
        entries.append(door_entry)

    entries.sort(key=lambda e: (e[0], e[1]))
    nodes = []
    for i, (ei, t, pos, kind) in enumerate(entries):
        is_door = (ei, t) == (door_entry[0], door_entry[1])
        nodes.append(GraphNode(id=i, pos=np.asarray(pos, dtype=float), kind=kind,
                               is_entrance=is_door))
    return nodes


def _nearest(ids, positions, query, k, exclude=None):
    """k nearest node ids by Euclidean distance; ties go to the lower id."""
    order = sorted(
        (i for i in ids if i != exclude),
        key=lambda i: (float(np.hypot(*(positions[i] - query))), i),
    )
    return order[:k]


def build_hybrid_graph(centers, boundary_nodes, k_bnd: int = K_BOUNDARY,
                       k_room: int = K_ROOM) -> HybridGraph:
    """Room and boundary nodes with perimeter-cycle and nearest-neighbor edges.

    ``centers`` is a sequence of ((x, y), room_type) in placement order; room
    node ids continue after the boundary ids.
    """
    if not centers:
        raise GraphError("graph needs at least one room node")
    m = len(boundary_nodes)
    nodes = [GraphNode(id=b.id, pos=b.pos.copy(), kind=b.kind,
                       is_entrance=b.is_entrance) for b in boundary_nodes]
    for j, (pos, rtype) in enumerate(centers):
        nodes.append(GraphNode(id=m + j, pos=np.asarray(pos, dtype=float),
                               kind=rtype))

    positions = {n.id: n.pos for n in nodes}
    edges = set()

    # perimeter cycle, both directions
    for i in range(m):
        j = (i + 1) % m
        edges.add((i, j))
        edges.add((j, i))

    boundary_ids = list(range(m))
    room_ids = list(range(m, m + len(centers)))
    for rid in room_ids:
        for b in _nearest(boundary_ids, positions, positions[rid], k_bnd):
            edges.add((rid, b))
        for other in _nearest(room_ids, positions, positions[rid],
                              min(k_room, len(room_ids) - 1), exclude=rid):
            edges.add((rid, other))

    return HybridGraph(nodes=nodes, edges=sorted(edges), n_boundary=m)


def node_features(g: HybridGraph) -> np.ndarray:
    """8-D features: [x/255, y/255, onehot(bed, rest, kit, bal, corner, edge)]."""
    feats = np.zeros((len(g.nodes), FEATURE_DIM), dtype=np.float64)
    for i, node in enumerate(g.nodes):
        feats[i, 0] = node.pos[0] / 255.0
        feats[i, 1] = node.pos[1] / 255.0
        feats[i, 2 + KIND_ORDER.index(node.kind)] = 1.0
    return feats


def build_graph_for_plan(envelope, door, centers, spacing_m=DEFAULT_SPACING_M,
                         scale_m_per_px=0.1, k_bnd=K_BOUNDARY,
                         k_room=K_ROOM) -> HybridGraph:
    boundary = build_boundary_nodes(envelope, door, spacing_m, scale_m_per_px)
    return build_hybrid_graph(centers, boundary, k_bnd=k_bnd, k_room=k_room)
