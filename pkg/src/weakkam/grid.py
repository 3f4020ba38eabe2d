"""Periodic grids and scalar fields on the flat torus [0, 2*pi)^n, n in {1, 2}."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap(x):
    """Wrap coordinates into [0, 2*pi). Non-finite input is rejected."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot wrap non-finite coordinates")
    return np.mod(arr, TWO_PI)


def torus_delta(a, b):
    """Shortest signed periodic representative of a - b, per axis in [-pi, pi)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return np.mod(d + np.pi, TWO_PI) - np.pi


def torus_distance(a, b):
    """Euclidean length of the shortest periodic displacement (last axis)."""
    d = np.atleast_1d(torus_delta(a, b))
    return np.linalg.norm(d, axis=-1)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic lattice with N nodes per axis, spacing h = 2*pi/N."""

    dim: int
    N: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.dim}")
        if self.N < 8:
            raise ValueError(f"grid needs at least 8 nodes per axis, got {self.N}")

    @property
    def h(self) -> float:
        return TWO_PI / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    def coord_arrays(self):
        """Per-axis coordinate arrays, meshgrid('ij') style in 2D."""
        ax = self.axis()
        if self.dim == 1:
            return (ax,)
        return tuple(np.meshgrid(ax, ax, indexing="ij"))

    def all_coords(self) -> np.ndarray:
        """Coordinates of every node, shape (size, dim), flat (row-major) order."""
        arrs = self.coord_arrays()
        return np.stack([a.ravel() for a in arrs], axis=-1)

    def multi_index(self, flat: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(int(flat), self.shape))

    def flat_index(self, multi) -> int:
        multi = tuple(int(m) % self.N for m in np.atleast_1d(multi))
        return int(np.ravel_multi_index(multi, self.shape))

    def node_coords(self, flat: int) -> np.ndarray:
        return np.array(self.multi_index(flat), dtype=float) * self.h

    def nearest_node(self, x) -> int:
        """Flat index of the grid node closest to x (periodic rounding)."""
        x = wrap(np.atleast_1d(x))
        idx = np.mod(np.rint(x / self.h).astype(int), self.N)
        return self.flat_index(idx)

    def neighbors(self, flat: int):
        """Flat indices of the 2*dim axis neighbors (periodic)."""
        multi = self.multi_index(flat)
        out = []
        for ax in range(self.dim):
            for step in (-1, 1):
                m = list(multi)
                m[ax] = (m[ax] + step) % self.N
                out.append(self.flat_index(m))
        return out


def mask_components(grid: TorusGrid, mask: np.ndarray):
    """Connected components of a boolean node mask under periodic axis adjacency.

    Returns a list of sorted flat-index arrays; components are ordered by their
    lowest flat index, which makes the decomposition deterministic.
    """
    flat_mask = np.asarray(mask, dtype=bool).ravel()
    seen = np.zeros(flat_mask.size, dtype=bool)
    components = []
    for seed in np.flatnonzero(flat_mask):
        if seen[seed]:
            continue
        stack = [int(seed)]
        seen[seed] = True
        comp = []
        while stack:
            node = stack.pop()
            comp.append(node)
            for nb in grid.neighbors(node):
                if flat_mask[nb] and not seen[nb]:
                    seen[nb] = True
                    stack.append(nb)
        components.append(np.array(sorted(comp), dtype=int))
    return components


def dilate_mask(mask: np.ndarray, cells: int) -> np.ndarray:
    """Binary dilation by a number of grid cells, periodic, axis connectivity."""
    out = np.asarray(mask, dtype=bool).copy()
    for _ in range(int(cells)):
        grown = out.copy()
        for ax in range(out.ndim):
            grown |= np.roll(out, 1, axis=ax)
            grown |= np.roll(out, -1, axis=ax)
        out = grown
    return out


class ScalarField:
    """Grid function on a TorusGrid; values[i] (1D) or values[i, j] with x = i*h."""

    __slots__ = ("grid", "values", "point_source")

    def __init__(self, grid: TorusGrid, values, point_source: bool = False):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("scalar field values must be finite")
        self.grid = grid
        self.values = values
        self.point_source = bool(point_source)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.point_source)

    def normalized(self) -> "ScalarField":
        """Same field shifted so its minimum value is zero."""
        return ScalarField(self.grid, self.values - self.values.min())

    def value_at_node(self, flat: int) -> float:
        return float(self.values.ravel()[int(flat)])

    def interpolate(self, points) -> np.ndarray:
        """Periodic (bi)linear interpolation at arbitrary coordinates.

        points: (dim,) or (m, dim) array-like; returns scalar or (m,) array.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.grid.dim:
            raise ValueError("point dimension mismatch")
        h = self.grid.h
        N = self.grid.N
        s = np.mod(pts / h, N)
        i0 = np.floor(s).astype(int) % N
        w = s - np.floor(s)
        if self.grid.dim == 1:
            a = self.values[i0[:, 0]]
            b = self.values[(i0[:, 0] + 1) % N]
            out = (1 - w[:, 0]) * a + w[:, 0] * b
        else:
            i1 = (i0 + 1) % N
            v00 = self.values[i0[:, 0], i0[:, 1]]
            v10 = self.values[i1[:, 0], i0[:, 1]]
            v01 = self.values[i0[:, 0], i1[:, 1]]
            v11 = self.values[i1[:, 0], i1[:, 1]]
            wx, wy = w[:, 0], w[:, 1]
            out = (
                v00 * (1 - wx) * (1 - wy)
                + v10 * wx * (1 - wy)
                + v01 * (1 - wx) * wy
                + v11 * wx * wy
            )
        if np.asarray(points).ndim == 1:
            return float(out[0])
        return out

    def sup_distance(self, other: "ScalarField") -> float:
        return float(np.abs(self.values - other.values).max())

    # -- serialization ------------------------------------------------------

    def to_csv(self, path, provenance: str = "adhoc"):
        """Row-major CSV with a provenance comment and an `n,N,h` header."""
        lines = [f"# provenance: {provenance}", "n,N,h",
                 f"{self.grid.dim},{self.grid.N},{self.grid.h:.17g}"]
        rows = self.values if self.grid.dim == 2 else self.values[None, :]
        for row in rows:
            lines.append(",".join(f"{v:.17g}" for v in row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ScalarField":
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        body = [ln for ln in lines if not ln.startswith("#")]
        if body[0] != "n,N,h":
            raise ValueError("missing n,N,h header")
        n_str, N_str, _h = body[1].split(",")
        grid = TorusGrid(int(n_str), int(N_str))
        data = np.array([[float(v) for v in ln.split(",")] for ln in body[2:]])
        values = data[0] if grid.dim == 1 else data
        return cls(grid, values)
