"""Keypoint graph construction: Delaunay triangulation and edge attributes.

Keypoint sets here are tiny (a few dozen points at most), so the
triangulation works directly from the defining property: a triangle belongs
to the Delaunay triangulation exactly when its circumcircle contains no
other point. Every point triple is tested with the incircle determinant;
exactly co-circular ties are broken by symbolically sinking each lifted
point by an infinitesimal that shrinks with point index, which picks one
diagonal of a co-circular quad deterministically. Degenerate inputs (fewer
than 3 points, all collinear, duplicate points) fall back to the complete
graph so downstream message passing always has edges to work with.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = ["KeypointGraph", "delaunay", "pseudo_coords", "build_graph"]


@dataclass
class KeypointGraph:
    """Directed-arc view of an undirected keypoint graph.

    arcs: (n_arcs, 2) int array of (src, dst); every non-loop arc appears in
    both directions, self-loops (i, i) come last. pseudo: (n_arcs, 2) edge
    attributes in [0, 1]^2 feeding the spline kernels.
    """

    num_nodes: int
    arcs: np.ndarray
    pseudo: np.ndarray
    self_loops: bool

    def edge_set(self) -> set[tuple[int, int]]:
        """Undirected non-loop edges as (min, max) pairs."""
        return {
            (min(u, v), max(u, v))
            for u, v in self.arcs
            if u != v
        }


def _signed_area(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _complete_edges(m: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


def _is_degenerate(points: np.ndarray) -> bool:
    m = len(points)
    if m < 3:
        return True
    # exact duplicates
    seen = {tuple(p) for p in points}
    if len(seen) < m:
        return True
    # all collinear
    a, b = points[0], points[1]
    for c in points[2:]:
        if abs(_signed_area(a, b, c)) > 1e-12:
            return False
    return True


def _orient(a, b, c) -> float:
    return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _tie_blocks(points, a: int, b: int, c: int, o: int) -> bool:
    """Resolve an exactly co-circular (triangle, point) tie.

    Each point's height on the lifting paraboloid is lowered by an
    infinitesimal that shrinks with point index, so the perturbed incircle
    determinant takes the sign of the first nonzero contribution in index
    order. (a, b, c) must be counter-clockwise; returns True when the
    perturbed point o lands strictly inside the circumcircle.
    """
    contrib = {
        a: -_orient(points[b], points[c], points[o]),
        b: _orient(points[a], points[c], points[o]),
        c: -_orient(points[a], points[b], points[o]),
        o: _orient(points[a], points[b], points[c]),
    }
    for idx in sorted(contrib):
        if contrib[idx] != 0.0:
            return contrib[idx] > 0.0
    return False  # unreachable: orient(a, b, c) != 0 for a kept triple


def _connected(m: int, edges: set[tuple[int, int]]) -> bool:
    adj: dict[int, list[int]] = {i: [] for i in range(m)}
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = {0}
    stack = [0]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == m


def delaunay(points) -> list[tuple[int, int]]:
    """Edges of the Delaunay triangulation of 2-D points.

    For m >= 3 points in general position this is the standard Delaunay edge
    set (every triangle circumcircle empty of the remaining points), found by
    testing all point triples with the incircle determinant. Exactly
    co-circular ties resolve deterministically by point index. Inputs with
    m < 3, all points collinear, or duplicate points return the complete
    graph instead.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("points must be an m x 2 array")
    if not np.all(np.isfinite(points)):
        raise ValueError("points must be finite")
    m = len(points)
    if _is_degenerate(points):
        return _complete_edges(m)

    trips = np.asarray(list(itertools.combinations(range(m), 3)), dtype=np.intp)
    av, bv, cv = (points[trips[:, i]] for i in range(3))
    orient = (bv[:, 0] - av[:, 0]) * (cv[:, 1] - av[:, 1]) - (
        bv[:, 1] - av[:, 1]
    ) * (cv[:, 0] - av[:, 0])
    # orient the triples counter-clockwise; exactly collinear triples are
    # never Delaunay triangles and drop out
    ccw = trips.copy()
    flip = orient < 0.0
    ccw[flip, 1], ccw[flip, 2] = trips[flip, 2], trips[flip, 1]
    ccw = ccw[orient != 0.0]
    if len(ccw) == 0:
        return _complete_edges(m)

    # incircle determinant of every (triple, other point) pair; positive
    # means strictly inside, zero is the co-circular tie
    rel_a = points[ccw[:, 0], None, :] - points[None, :, :]
    rel_b = points[ccw[:, 1], None, :] - points[None, :, :]
    rel_c = points[ccw[:, 2], None, :] - points[None, :, :]
    na = (rel_a * rel_a).sum(axis=-1)
    nb = (rel_b * rel_b).sum(axis=-1)
    nc = (rel_c * rel_c).sum(axis=-1)
    det = (
        rel_a[..., 0] * (rel_b[..., 1] * nc - nb * rel_c[..., 1])
        - rel_a[..., 1] * (rel_b[..., 0] * nc - nb * rel_c[..., 0])
        + na * (rel_b[..., 0] * rel_c[..., 1] - rel_b[..., 1] * rel_c[..., 0])
    )
    member = np.zeros((len(ccw), m), dtype=bool)
    rows = np.arange(len(ccw))
    for col in range(3):
        member[rows, ccw[:, col]] = True
    blocked = ((det > 0.0) & ~member).any(axis=1)

    tie_rows, tie_cols = np.nonzero((det == 0.0) & ~member & ~blocked[:, None])
    for r, o in zip(tie_rows.tolist(), tie_cols.tolist()):
        if not blocked[r] and _tie_blocks(
            points, int(ccw[r, 0]), int(ccw[r, 1]), int(ccw[r, 2]), o
        ):
            blocked[r] = True

    edges: set[tuple[int, int]] = set()
    for i, j, k in ccw[~blocked].tolist():
        edges.add((min(i, j), max(i, j)))
        edges.add((min(i, k), max(i, k)))
        edges.add((min(j, k), max(j, k)))
    # a stranded vertex or disconnected result can only come out of
    # numerically perverse inputs; keep the connectivity guarantee
    if not edges or not _connected(m, edges):
        return _complete_edges(m)
    return sorted(edges)


def pseudo_coords(points, arcs) -> np.ndarray:
    """Per-arc 2-D attributes: min-max rescaled coordinate offsets.

    For arc (u -> v) the raw offset is coords[v] - coords[u]; each component
    is rescaled to [0, 1] by the min/max of that component over all arcs. A
    component that is constant across arcs maps to 0.5.
    """
    points = np.asarray(points, dtype=np.float64)
    arcs = np.asarray(arcs, dtype=np.intp)
    if arcs.size == 0:
        return np.zeros((0, 2))
    offsets = points[arcs[:, 1]] - points[arcs[:, 0]]
    lo = offsets.min(axis=0)
    hi = offsets.max(axis=0)
    span = hi - lo
    out = np.empty_like(offsets)
    for c in range(2):
        if span[c] <= 1e-12:
            out[:, c] = 0.5
        else:
            out[:, c] = (offsets[:, c] - lo[c]) / span[c]
    return out


def build_graph(points, self_loops: bool = True) -> KeypointGraph:
    """Delaunay arcs plus pseudo-coordinates, with self-loops at (0.5, 0.5)."""
    points = np.asarray(points, dtype=np.float64)
    m = len(points)
    edges = delaunay(points)
    arc_list: list[tuple[int, int]] = []
    for u, v in edges:
        arc_list.append((u, v))
        arc_list.append((v, u))
    pseudo = pseudo_coords(points, np.asarray(arc_list).reshape(-1, 2)) if arc_list else np.zeros((0, 2))
    if self_loops:
        loops = [(i, i) for i in range(m)]
        arc_list.extend(loops)
        pseudo = np.vstack([pseudo, np.full((m, 2), 0.5)]) if m else pseudo
    arcs = np.asarray(arc_list, dtype=np.intp).reshape(-1, 2)
    return KeypointGraph(num_nodes=m, arcs=arcs, pseudo=pseudo, self_loops=self_loops)
