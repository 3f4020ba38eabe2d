"""Generalized critical points of barrier fields, their classification, the
homoclinic criterion conditions (a)-(d), minimax values between nodes, and
Lusternik-Schnirelmann category bounds for the recognized torus topologies.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .barrier import AubrySet, ConjugatePair
from .grid import ScalarField, TorusGrid, dilate_mask, mask_components, torus_delta
from .models import LagrangianModel
from .semiconcave import (DiffHull, RegularizedField, minimal_norm_element,
                          semiconcavity_constant, superdifferential)

CLASSES = ("local_min", "isolated_local_max", "nonisolated_local_max",
           "mountain_pass", "unresolved")


class NoCriticalPointsError(RuntimeError):
    """Empty critical set over a non-contractible domain: resolution issue."""


@dataclass
class CriticalPoint:
    node: int
    coords: np.ndarray
    value: float
    hull: DiffHull
    component: np.ndarray
    nonisolated: bool
    cls: str = "unresolved"
    satisfied: tuple = ()

    def to_json_dict(self) -> dict:
        return {
            "node": int(self.node),
            "coords": [float(v) for v in self.coords],
            "value": float(self.value),
            "hull_vertices": [[float(c) for c in v] for v in self.hull.vertices],
            "class": self.cls,
            "satisfied_conditions": list(self.satisfied),
            "component_size": int(len(self.component)),
        }


def find_critical_points(B_reg: RegularizedField, aubry: AubrySet,
                         U_radius: int = 3, gtol: float | None = None) -> list:
    """Critical components of the regularized barrier outside the Aubry set.

    Nodes where the regularized gradient norm is below gtol are grouped into
    connected components; one representative per component (smallest gradient,
    lowest index on ties) is re-verified on the unregularized field via its
    superdifferential hull.
    """
    base = B_reg.base
    grid = base.grid
    csc = semiconcavity_constant(base)
    if gtol is None:
        gtol = 2.0 * max(csc, 1e-12) * grid.h
    excluded = dilate_mask(aubry.node_mask(), U_radius)
    gnorm = B_reg.gradient_norm()
    mask = (gnorm <= gtol) & ~excluded
    points = []
    for comp in mask_components(grid, mask):
        rep = comp[int(np.argmin(gnorm.ravel()[comp]))]
        hull = superdifferential(base, int(rep), csc=csc)
        if float(np.linalg.norm(minimal_norm_element(hull))) > gtol:
            continue
        points.append(CriticalPoint(
            node=int(rep), coords=grid.node_coords(int(rep)),
            value=base.value_at_node(int(rep)), hull=hull,
            component=comp, nonisolated=len(comp) > 1))
    if not points:
        cat, _ = category_lower_bound(grid, excluded)
        if cat >= 2:
            raise NoCriticalPointsError(
                "no critical component found although the excluded complement "
                "is non-contractible; refine the grid or enlarge gtol")
    return points


def _ball_offsets(dim: int, radius_cells: int):
    r = int(radius_cells)
    if dim == 1:
        return [(k,) for k in range(-r, r + 1)]
    return [(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)
            if a * a + b * b <= r * r]


def classify(point: CriticalPoint, B: ScalarField, radius_cells: int = 5,
             other_critical_nodes=None) -> str:
    """Classify a critical point by the local behavior of the barrier field.

    A local maximum counts as isolated when its critical component is a single
    node and no other critical node enters the probe ball; a mountain pass is
    detected when the strict sublevel splits the punctured ball into at least
    two components; a flat ball is reported unresolved.
    """
    grid = B.grid
    N = grid.N
    multi = np.asarray(grid.multi_index(point.node))
    offsets = _ball_offsets(grid.dim, radius_cells)
    idx = [tuple((multi + np.asarray(off)) % N) for off in offsets]
    ball_vals = np.array([B.values[i] if grid.dim == 2 else B.values[i[0]] for i in idx])
    center = point.value
    span = float(ball_vals.max() - ball_vals.min())
    if span <= 1e-12 * (1.0 + abs(center)):
        return "unresolved"          # flat plateau
    is_max = bool((ball_vals <= center + 1e-12).all())
    is_min = bool((ball_vals >= center - 1e-12).all())
    if is_max:
        others = set(int(n) for n in other_critical_nodes) if other_critical_nodes is not None else set()
        ball_flats = {int(np.ravel_multi_index(i, grid.shape)) for i in idx}
        isolated = (len(point.component) == 1
                    and not (ball_flats - {point.node}) & others)
        return "isolated_local_max" if isolated else "nonisolated_local_max"
    if is_min:
        return "local_min"
    # mountain pass: the strict sublevel near the point splits locally
    sub_offsets = [off for off, v in zip(offsets, ball_vals)
                   if v < center - 1e-12 and any(off)]
    if sub_offsets and _local_components(sub_offsets) >= 2:
        return "mountain_pass"
    return "unresolved"


def _local_components(offsets) -> int:
    """Connected components of a set of local offsets (axis adjacency)."""
    todo = set(tuple(o) for o in offsets)
    comps = 0
    while todo:
        comps += 1
        stack = [todo.pop()]
        while stack:
            cur = stack.pop()
            for ax in range(len(cur)):
                for step in (-1, 1):
                    nb = list(cur)
                    nb[ax] += step
                    nb = tuple(nb)
                    if nb in todo:
                        todo.remove(nb)
                        stack.append(nb)
    return comps


def check_criteria(point: CriticalPoint, pair: ConjugatePair, model: LagrangianModel,
                   c, alpha: float, *, delta_smooth: float | None = None,
                   eps_grid: float | None = None, B: ScalarField | None = None) -> tuple:
    """Evaluate the homoclinic criterion conditions (a)-(d) at a critical point.

    (a) one of the lifted solutions is differentiable there; (b) the superlevel
    set spans >= n-1 independent directions in every probe shell (vacuous in
    1D); (c) [2D] zero is not interior to the barrier superdifferential;
    (d) [2D] the critical component is not a singleton.
    """
    grid = pair.grid
    h = grid.h
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if B is None:
        B = ScalarField(grid, pair.u_minus.values - pair.u_plus.values)
    csc = semiconcavity_constant(B)
    if delta_smooth is None:
        delta_smooth = max(4.0 * csc * h, 1e-9)
    if eps_grid is None:
        eps_grid = max(csc * h, 1e-12)
    satisfied = []

    minus_hull = superdifferential(pair.u_minus, point.node, c=c)
    neg_plus = ScalarField(grid, -pair.u_plus.values)
    plus_hull_neg = superdifferential(neg_plus, point.node, c=-c)
    if minus_hull.is_singleton(delta_smooth) or plus_hull_neg.is_singleton(delta_smooth):
        satisfied.append("a")

    if grid.dim == 1:
        satisfied.append("b")      # threshold n-1 = 0 holds trivially
    else:
        level = point.value - eps_grid
        multi = np.asarray(grid.multi_index(point.node))
        ok = True
        for shell in (2, 4, 8):
            dirs = []
            for off in _ball_offsets(2, shell):
                if max(abs(off[0]), abs(off[1])) != shell:
                    continue
                idx = tuple((multi + np.asarray(off)) % grid.N)
                if B.values[idx] >= level:
                    d = np.asarray(off, dtype=float)
                    dirs.append(d / np.linalg.norm(d))
            if not dirs or np.linalg.matrix_rank(np.array(dirs), tol=1e-8) < grid.dim - 1:
                ok = False
                break
        if ok:
            satisfied.append("b")

        barrier_hull = superdifferential(B, point.node, csc=csc)
        if not barrier_hull.interior_contains_zero():
            satisfied.append("c")
        if point.nonisolated:
            satisfied.append("d")

    return tuple(satisfied)


# -- minimax ------------------------------------------------------------------

@dataclass
class MinimaxResult:
    endpoints: tuple
    value: float
    path: list
    saddle_node: int
    mode: str

    def to_json_dict(self) -> dict:
        return {"endpoints": [int(e) for e in self.endpoints], "value": self.value,
                "path": [int(n) for n in self.path], "saddle_node": int(self.saddle_node),
                "mode": self.mode}


class _UnionFind:
    __slots__ = ("parent", "rank")

    def __init__(self, n):
        self.parent = np.arange(n)
        self.rank = np.zeros(n, dtype=int)

    def find(self, a):
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def _flat_neighbors(grid: TorusGrid, flat: int):
    return grid.neighbors(flat)


def minimax_value(B: ScalarField, x0, x1, mode: str = "max_of_min") -> MinimaxResult:
    """Exact discrete minimax over 4-connected periodic grid paths.

    max_of_min maximizes the lowest field value along a path (bottleneck /
    widest path); min_of_max is the mountain-pass value.  The witness path is
    the cheapest ridge path inside the optimal threshold set, so it hugs the
    high ground; ties break on node index.
    """
    if mode not in ("max_of_min", "min_of_max"):
        raise ValueError("mode must be max_of_min or min_of_max")
    grid = B.grid
    a = int(x0) if np.isscalar(x0) else grid.nearest_node(x0)
    b = int(x1) if np.isscalar(x1) else grid.nearest_node(x1)
    if a == b:
        raise ValueError("endpoints must be distinct grid nodes")
    sign = 1.0 if mode == "max_of_min" else -1.0
    sv = sign * B.values.ravel()

    order = np.lexsort((np.arange(sv.size), -sv))   # descending, ties by index
    uf = _UnionFind(sv.size)
    active = np.zeros(sv.size, dtype=bool)
    bottleneck = None
    for node in order:
        node = int(node)
        active[node] = True
        for nb in _flat_neighbors(grid, node):
            if active[nb]:
                uf.union(node, nb)
        if active[a] and active[b] and uf.find(a) == uf.find(b):
            bottleneck = float(sv[node])
            break
    assert bottleneck is not None, "periodic grid is connected"

    allowed = sv >= bottleneck
    top = float(sv[allowed].max())
    cost = (top - sv)           # ridge-following: high values are cheap
    dist = np.full(sv.size, np.inf)
    prev = np.full(sv.size, -1, dtype=int)
    dist[a] = 0.0
    heap = [(0.0, a)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        if node == b:
            break
        for nb in _flat_neighbors(grid, node):
            if not allowed[nb]:
                continue
            nd = d + cost[nb]
            if nd < dist[nb] - 1e-15:
                dist[nb] = nd
                prev[nb] = node
                heapq.heappush(heap, (nd, nb))
    path = [b]
    while path[-1] != a:
        path.append(int(prev[path[-1]]))
    path.reverse()

    vals_on_path = B.values.ravel()[path]
    saddle_pos = int(np.argmin(vals_on_path)) if mode == "max_of_min" else int(np.argmax(vals_on_path))
    value = sign * bottleneck
    return MinimaxResult((a, b), value, path, int(path[saddle_pos]), mode)


# -- category bounds ----------------------------------------------------------

def category_lower_bound(grid: TorusGrid, excluded_mask) -> tuple[int, str]:
    """Lusternik-Schnirelmann category of the torus minus the excluded region,
    for the recognized cases; falls back to 1 with a note otherwise."""
    excluded = np.asarray(excluded_mask, dtype=bool)
    if excluded.shape != grid.shape:
        raise ValueError("excluded mask shape mismatch")
    if excluded.all():
        raise ValueError("excluded region covers the whole torus")
    if grid.dim == 2 and not excluded.any():
        return 3, ""
    comps = mask_components(grid, excluded)
    if grid.dim == 1:
        if len(comps) == 1 and 0 < len(comps[0]) < grid.N:
            return 1, ""            # circle minus an arc: contractible
        return 1, "unrecognized topology"
    disks = True
    for comp in comps:
        multis = np.array([grid.multi_index(int(n)) for n in comp])
        for ax in range(2):
            if np.unique(multis[:, ax]).size == grid.N:
                disks = False
        if not disks:
            break
    if comps and disks:
        return 2, ""                # torus minus disjoint disks
    return 1, "unrecognized topology"
