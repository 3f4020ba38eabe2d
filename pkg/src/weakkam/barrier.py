"""Peierls barrier rows, the projected Aubry set and its classes, conjugate
pairs of weak KAM solutions, and barrier fields.

The diagonal of the Peierls barrier is evaluated through class representatives:
h(x, x) = min over near-minimizing nodes z of [cost(z, x) + cost(x, z)], with
one pair of point-source solves per representative.  This keeps the work at a
handful of solves instead of one per grid node and matches the row-cache
design used everywhere else in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ScalarField, TorusGrid, mask_components, torus_distance
from .models import LagrangianModel
from .solver import SolverSettings, WeakKAMSolution, point_source_solution, solve
from .util import ordered_thread_map


class EmptyAubrySetError(RuntimeError):
    def __init__(self, min_diag: float, eps: float):
        super().__init__(
            f"no node has diagonal barrier <= {eps:.3e} (min found {min_diag:.3e}); "
            "loosen eps_aubry or refine the grid")
        self.min_diag = min_diag


class MultiClassObstructionError(RuntimeError):
    """Conjugate pairing failed: the solutions disagree across Aubry nodes."""


def default_eps_aubry(grid: TorusGrid, tau: float) -> float:
    # tau contribution capped at h: for tau >> h the waiting cost at a node
    # near the potential minimum stays O(h), not O(tau)
    return 5.0 * (grid.h + min(tau, grid.h))


class PeierlsCache:
    """Cache of point-source barrier rows keyed by (node, orientation)."""

    def __init__(self, model: LagrangianModel, c, grid: TorusGrid, alpha: float,
                 settings: SolverSettings | None = None, workers: int = 1):
        self.model = model
        self.c = np.atleast_1d(np.asarray(c if c is not None else np.zeros(grid.dim), float))
        self.grid = grid
        self.alpha = float(alpha)
        self.settings = settings or SolverSettings()
        self.workers = int(workers)
        self._rows: dict[tuple[int, bool], ScalarField] = {}

    def row(self, node: int, reverse: bool = False) -> ScalarField:
        key = (int(node), bool(reverse))
        if key not in self._rows:
            direction = "forward" if reverse else "backward"
            self._rows[key] = point_source_solution(
                self.model, self.c, int(node), self.grid, self.alpha,
                self.settings, direction=direction)
        return self._rows[key]

    def rows(self, nodes, reverse: bool = False):
        nodes = [int(n) for n in nodes]
        missing = [n for n in nodes if (n, bool(reverse)) not in self._rows]
        computed = ordered_thread_map(lambda n: self.row(n, reverse), missing,
                                      self.workers) if missing else []
        del computed
        return [self.row(n, reverse) for n in nodes]


def peierls_row(model: LagrangianModel, c, y, grid: TorusGrid, alpha: float | None = None,
                settings: SolverSettings | None = None, reverse: bool = False,
                cache: PeierlsCache | None = None) -> ScalarField:
    """Barrier row h_c(y, .) (or h_c(., y) with reverse=True) as a grid field."""
    if cache is not None:
        node = y if np.isscalar(y) else cache.grid.nearest_node(y)
        return cache.row(int(node), reverse)
    if alpha is None:
        alpha = solve(model, c, grid, "backward", settings).alpha
    node = y if np.isscalar(y) else grid.nearest_node(y)
    direction = "forward" if reverse else "backward"
    return point_source_solution(model, c, int(node), grid, alpha, settings,
                                 direction=direction)


@dataclass
class AubrySet:
    """Nodes with (numerically) vanishing self-connection cost, partitioned
    into classes by the symmetrized pseudometric."""

    grid: TorusGrid
    nodes: np.ndarray            # sorted flat indices
    classes: list                # list of sorted flat index arrays
    reps: np.ndarray             # one representative node per class
    eps_aubry: float
    eps_class: float
    diag: ScalarField            # diagonal barrier h(x, x) on the whole grid

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def node_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.size, dtype=bool)
        mask[self.nodes] = True
        return mask.reshape(self.grid.shape)

    def node_coords(self) -> np.ndarray:
        return np.array([self.grid.node_coords(n) for n in self.nodes])

    def distance_to(self, x) -> float:
        """Torus distance from x to the nearest Aubry node."""
        coords = self.node_coords()
        return float(np.min(torus_distance(coords, np.atleast_1d(np.asarray(x, float)))))

    def class_of_point(self, x) -> int:
        coords = self.node_coords()
        nearest = self.nodes[int(np.argmin(torus_distance(coords, np.atleast_1d(np.asarray(x, float)))))]
        for i, cls in enumerate(self.classes):
            if nearest in cls:
                return i
        raise ValueError("point does not resolve to an Aubry class")

    def to_json_dict(self) -> dict:
        return {
            "eps_aubry": self.eps_aubry,
            "eps_class": self.eps_class,
            "n_classes": self.n_classes,
            "nodes": [int(n) for n in self.nodes],
            "classes": [[int(n) for n in cls] for cls in self.classes],
            "reps": [int(n) for n in self.reps],
        }


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def aubry_set(model: LagrangianModel, c, grid: TorusGrid,
              eps_aubry: float | None = None, eps_class: float | None = None, *,
              u_minus: WeakKAMSolution | None = None,
              u_plus: WeakKAMSolution | None = None,
              settings: SolverSettings | None = None,
              cache: PeierlsCache | None = None,
              max_reps: int = 64, workers: int = 1) -> AubrySet:
    """Detect the projected Aubry set and partition it into classes.

    Candidate regions come from the contact set of a backward/forward solution
    pair; each candidate component contributes one representative, whose
    outgoing and incoming cost rows give the diagonal barrier everywhere and
    the pairwise pseudometric between representatives.
    """
    settings = settings or SolverSettings()
    tau = settings.resolve_tau(grid)
    if eps_aubry is None:
        eps_aubry = default_eps_aubry(grid, tau)
    if eps_class is None:
        eps_class = 10.0 * eps_aubry
    if u_minus is None:
        u_minus = solve(model, c, grid, "backward", settings)
    if u_plus is None:
        u_plus = solve(model, c, grid, "forward", settings)
    if cache is None:
        cache = PeierlsCache(model, c, grid, u_minus.alpha, settings, workers)

    contact = u_minus.u.values - u_plus.u.values
    contact = contact - contact.min()
    components = mask_components(grid, contact <= eps_aubry)
    flat = contact.ravel()
    reps = []
    for comp in components:
        best = comp[int(np.argmin(flat[comp]))]
        reps.append((float(flat[best]), int(best)))
    reps.sort()
    reps = [node for _, node in reps[:max_reps]]
    reps.sort()

    rows_out = cache.rows(reps, reverse=False)   # cost(rep, .)
    rows_in = cache.rows(reps, reverse=True)     # cost(., rep)

    diag_stack = np.stack([out.values + inc.values
                           for out, inc in zip(rows_out, rows_in)])
    diag = diag_stack.min(axis=0)
    which_rep = diag_stack.argmin(axis=0)
    node_mask = diag <= eps_aubry
    nodes = np.flatnonzero(node_mask.ravel())
    if nodes.size == 0:
        raise EmptyAubrySetError(float(diag.min()), eps_aubry)

    # single-linkage over representatives under the symmetrized pseudometric
    uf = _UnionFind(len(reps))
    for i in range(len(reps)):
        for j in range(i + 1, len(reps)):
            d_ij = rows_out[i].value_at_node(reps[j]) + rows_out[j].value_at_node(reps[i])
            if d_ij <= eps_class:
                uf.union(i, j)
    roots = sorted({uf.find(i) for i in range(len(reps))})
    root_to_class = {r: k for k, r in enumerate(roots)}
    class_nodes = [[] for _ in roots]
    rep_idx = which_rep.ravel()
    for node in nodes:
        class_nodes[root_to_class[uf.find(int(rep_idx[node]))]].append(int(node))
    classes = [np.array(sorted(cn), dtype=int) for cn in class_nodes if cn]
    classes.sort(key=lambda arr: int(arr[0]))
    class_reps = []
    for cls in classes:
        members = [r for r in reps if r in set(cls.tolist())]
        class_reps.append(members[0] if members else int(cls[int(np.argmin(diag.ravel()[cls]))]))

    return AubrySet(grid, nodes, classes, np.array(class_reps, dtype=int),
                    float(eps_aubry), float(eps_class), ScalarField(grid, diag))


@dataclass
class ConjugatePair:
    """Backward/forward weak KAM solutions normalized to agree on the Aubry set."""

    u_minus: ScalarField
    u_plus: ScalarField
    c: np.ndarray
    alpha: float
    shift: float
    eps_pair: float

    @property
    def grid(self) -> TorusGrid:
        return self.u_minus.grid


def conjugate_pair(u_minus: WeakKAMSolution, u_plus: WeakKAMSolution,
                   aubry: AubrySet, eps_pair: float | None = None) -> ConjugatePair:
    """Normalize the forward solution against the backward one on Aubry nodes."""
    if u_minus.direction != "backward" or u_plus.direction != "forward":
        raise ValueError("expected one backward and one forward solution")
    if u_minus.u.grid != u_plus.u.grid:
        raise ValueError("solutions live on different grids")
    if not np.allclose(u_minus.c, u_plus.c):
        raise ValueError("solutions have different cohomology")
    if eps_pair is None:
        eps_pair = aubry.eps_aubry
    diff = u_minus.u.values - u_plus.u.values
    aubry_diff = diff.ravel()[aubry.nodes]
    shift = float(aubry_diff.min())
    spread = float(aubry_diff.max() - aubry_diff.min())
    if spread > eps_pair:
        raise MultiClassObstructionError(
            f"backward/forward difference varies by {spread:.3e} across Aubry nodes "
            f"(> {eps_pair:.3e}); conjugacy requires pairing per Aubry class")
    shifted = u_plus.u.values + shift
    if float((u_minus.u.values - shifted).min()) < -eps_pair:
        raise MultiClassObstructionError("normalized difference dips below -eps_pair")
    return ConjugatePair(u_minus.u, ScalarField(u_minus.u.grid, shifted),
                         np.atleast_1d(u_minus.c), u_minus.alpha, shift, float(eps_pair))


@dataclass
class BarrierField:
    """Difference of a conjugate (or elementary) solution pair."""

    field: ScalarField
    kind: str                   # "conjugate" | "hetero"
    eps_pair: float
    source_classes: tuple = (None, None)

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def zero_set_mask(self) -> np.ndarray:
        return self.field.values <= self.eps_pair


def barrier_function(pair: ConjugatePair) -> BarrierField:
    """Pointwise difference of the conjugate pair; vanishes on the Aubry set."""
    values = pair.u_minus.values - pair.u_plus.values
    return BarrierField(ScalarField(pair.grid, values), "conjugate", pair.eps_pair)


def hetero_barrier(u1_minus: ScalarField, u2_plus: ScalarField, *,
                   class_1: int | None = None, class_2: int | None = None,
                   eps_pair: float = 0.0) -> BarrierField:
    """Barrier between two distinct Aubry classes: elementary backward solution
    of the first minus elementary forward solution of the second.

    No conjugacy is implied, so the minimum need not vanish; minimizers are
    candidate connecting points.
    """
    if u1_minus.grid != u2_plus.grid:
        raise ValueError("fields live on different grids")
    if class_1 is not None and class_1 == class_2:
        raise ValueError("identical classes: use barrier_function on a conjugate pair")
    values = u1_minus.values - u2_plus.values
    return BarrierField(ScalarField(u1_minus.grid, values), "hetero", eps_pair,
                        (class_1, class_2))
