"""Superdifferentials, limiting differentials, and sup-convolution smoothing.

Hulls of generalized gradients are estimated from one-sided directional
difference quotients extrapolated to zero radius (support values of the
superdifferential), intersected as halfplanes in 2D.  This keeps the corner
slopes of a semiconcave field accurate to O(r^2) instead of the O(C*r) bias a
raw difference quotient would carry.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .grid import ScalarField, TorusGrid
from .models import HamiltonianModel


class SemiconcavityError(ValueError):
    """Slope data inconsistent with a semiconcave input field."""


class WindowError(ValueError):
    """Sup-convolution window does not fit on the torus (lambda too large)."""


def semiconcavity_constant(field: ScalarField) -> float:
    """Largest positive second central difference per squared spacing."""
    u = field.values
    h2 = field.grid.h**2
    worst = 0.0
    for ax in range(field.grid.dim):
        second = (np.roll(u, -1, axis=ax) - 2.0 * u + np.roll(u, 1, axis=ax)) / h2
        worst = max(worst, float(second.max()))
    return worst


# -- hulls --------------------------------------------------------------------

@dataclass
class DiffHull:
    """Convex polytope of covectors at a base point (interval or polygon)."""

    point: np.ndarray
    vertices: np.ndarray   # (m, dim)

    def __post_init__(self):
        self.point = np.atleast_1d(np.asarray(self.point, dtype=float))
        self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def diameter(self) -> float:
        if len(self.vertices) < 2:
            return 0.0
        diffs = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((diffs**2).sum(-1)).max())

    def is_singleton(self, tol: float) -> bool:
        return self.diameter <= tol

    def distance_to_zero(self) -> float:
        return float(np.linalg.norm(minimal_norm_element(self)))

    def contains_zero(self, tol: float = 0.0) -> bool:
        return self.distance_to_zero() <= tol

    def interior_contains_zero(self, margin: float = 1e-12) -> bool:
        """Strict interior test; degenerate (rank-deficient) hulls have none."""
        verts = self.vertices
        if self.dim == 1:
            lo, hi = verts.min(), verts.max()
            return bool(lo < -margin and hi > margin)
        if len(verts) < 3:
            return False
        centered = verts - verts.mean(axis=0)
        svals = np.linalg.svd(centered, compute_uv=False)
        if svals[-1] <= max(margin, 1e-9 * (1.0 + svals[0])):
            return False
        ordered = _sort_ccw(verts)
        for i in range(len(ordered)):
            a, b = ordered[i], ordered[(i + 1) % len(ordered)]
            edge = b - a
            # origin must be strictly left of every CCW edge
            cross = edge[0] * (-a[1]) - edge[1] * (-a[0])
            if cross <= margin * (np.linalg.norm(edge) + 1.0):
                return False
        return True

    def to_json_dict(self) -> dict:
        return {"point": [float(v) for v in self.point],
                "vertices": [[float(c) for c in v] for v in self.vertices],
                "diameter": self.diameter}


def _sort_ccw(verts: np.ndarray) -> np.ndarray:
    center = verts.mean(axis=0)
    ang = np.arctan2(verts[:, 1] - center[1], verts[:, 0] - center[0])
    return verts[np.argsort(ang, kind="stable")]


def _dedupe(verts: list, tol: float) -> np.ndarray:
    out = []
    for v in verts:
        if all(np.linalg.norm(v - w) > tol for w in out):
            out.append(v)
    return np.array(out)


_DIRS_2D = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]


def _one_sided_intercept(field: ScalarField, multi, direction, steps):
    """Directional derivative estimate at r -> 0 from one-sided quotients.

    steps: node counts along `direction` (cells); a linear fit in the radius
    extrapolates the quotients to zero.
    """
    u = field.values
    N = field.grid.N
    h = field.grid.h
    d = np.asarray(direction, dtype=int)
    dist_unit = h * float(np.linalg.norm(d))
    base = u[tuple(multi)] if field.grid.dim == 2 else u[multi[0]]
    radii, quots = [], []
    for m in steps:
        idx = tuple((np.asarray(multi) + m * d) % N)
        val = u[idx] if field.grid.dim == 2 else u[idx[0]]
        r = m * dist_unit
        radii.append(r)
        quots.append((val - base) / r)
    if len(radii) == 1:
        return quots[0]
    coeffs = np.polyfit(radii, quots, 1)
    return float(coeffs[-1])


def superdifferential(field: ScalarField, node: int, radii=None, *,
                      c=None, csc: float | None = None,
                      budget_factor: float = 8.0) -> DiffHull:
    """Estimate the superdifferential hull of a semiconcave grid field.

    For lifted weak KAM fields pass c so the covectors are reported as full
    momenta c + local slope.  Vertices of the returned hull form a minimal
    extreme set (deduplicated).
    """
    grid = field.grid
    h = grid.h
    if radii is None:
        radii = (8 * h, 4 * h)
    radii = sorted(float(r) for r in radii)
    if csc is None:
        csc = semiconcavity_constant(field)
    budget = budget_factor * max(csc, 1.0) * h
    multi = grid.multi_index(node)
    point = grid.node_coords(node)
    c = np.zeros(grid.dim) if c is None else np.atleast_1d(np.asarray(c, dtype=float))

    if grid.dim == 1:
        steps = [max(1, round(r / h)) for r in radii]
        lo = _one_sided_intercept(field, multi, (1,), steps)
        minus = _one_sided_intercept(field, multi, (-1,), steps)
        hi = -minus
        if lo > hi + budget:
            raise SemiconcavityError(
                f"one-sided slopes cross by {lo - hi:.3e} at node {node}; "
                "input does not look semiconcave")
        if lo > hi:
            lo = hi = 0.5 * (lo + hi)
        verts = _dedupe([np.array([lo]), np.array([hi])], 1e-10 * (1.0 + abs(hi)))
        return DiffHull(point, verts + c)

    supports = []
    for d in _DIRS_2D:
        norm_d = float(np.hypot(*d))
        steps = sorted({max(1, round(r / (h * norm_d))) for r in radii})
        b = _one_sided_intercept(field, multi, d, steps)
        e = np.array(d, dtype=float) / norm_d
        supports.append((e, b))

    verts = _clip_halfplanes(supports, budget)
    if verts is None:
        raise SemiconcavityError(
            f"support estimates at node {node} are inconsistent beyond the "
            "semiconcavity budget; input does not look semiconcave")
    return DiffHull(point, verts + c)


def _clip_halfplanes(supports, budget: float):
    """Intersect {<p, e> >= b} halfplanes by polygon clipping.

    Relaxes the supports by the semiconcavity budget if the raw intersection
    is empty (estimation jitter at a smooth point); returns None if even the
    relaxed intersection is empty.
    """
    bound = 10.0 * (1.0 + max(abs(b) for _, b in supports))
    for relax in (0.0, budget):
        poly = [np.array(v, dtype=float) for v in
                [(-bound, -bound), (bound, -bound), (bound, bound), (-bound, bound)]]
        for e, b in supports:
            poly = _clip_one(poly, e, b - relax)
            if not poly:
                break
        if poly:
            verts = _dedupe(poly, 1e-9 * bound)
            return verts
    return None


def _clip_one(poly, e, b):
    """Sutherland-Hodgman clip of a convex polygon by {<p, e> >= b}."""
    out = []
    n = len(poly)
    for i in range(n):
        cur, nxt = poly[i], poly[(i + 1) % n]
        c_in = np.dot(cur, e) >= b
        n_in = np.dot(nxt, e) >= b
        if c_in:
            out.append(cur)
        if c_in != n_in:
            denom = np.dot(nxt - cur, e)
            t = (b - np.dot(cur, e)) / denom
            out.append(cur + t * (nxt - cur))
    return out


def minimal_norm_element(hull: DiffHull) -> np.ndarray:
    """Euclidean projection of the origin onto the hull."""
    verts = hull.vertices
    if len(verts) == 1:
        return verts[0].copy()
    if hull.dim == 1:
        lo, hi = float(verts.min()), float(verts.max())
        return np.array([min(max(0.0, lo), hi)])
    ordered = _sort_ccw(verts)
    if len(ordered) >= 3:
        inside = True
        sign = 0.0
        for i in range(len(ordered)):
            a, b = ordered[i], ordered[(i + 1) % len(ordered)]
            cross = (b[0] - a[0]) * (-a[1]) - (b[1] - a[1]) * (-a[0])
            if sign == 0.0:
                sign = np.sign(cross)
            elif np.sign(cross) != 0 and np.sign(cross) != sign:
                inside = False
                break
        if inside and sign != 0.0:
            return np.zeros(2)
    best = None
    best_norm = np.inf
    for i in range(len(ordered)):
        a, b = ordered[i], ordered[(i + 1) % len(ordered)]
        seg = b - a
        denom = float(np.dot(seg, seg))
        t = 0.0 if denom == 0 else min(1.0, max(0.0, -float(np.dot(a, seg)) / denom))
        cand = a + t * seg
        nrm = float(np.linalg.norm(cand))
        if nrm < best_norm:
            best_norm = nrm
            best = cand
    return best


def limiting_differentials(hull: DiffHull, hamiltonian: HamiltonianModel,
                           alpha: float, eps_energy: float = 0.05) -> np.ndarray:
    """Hull vertices lying on the critical energy shell |H - alpha| <= eps.

    Also verifies the strict-convexity picture: interior sample points of the
    hull must satisfy H < alpha + eps.
    """
    x = hull.point
    on_shell = [v for v in hull.vertices
                if abs(hamiltonian.H(x, v) - alpha) <= eps_energy]
    if not on_shell:
        raise ValueError(
            "no hull vertex lies on the energy shell; widen the estimation "
            "radii or refine the grid")
    if len(hull.vertices) >= 2:
        samples = [hull.vertices.mean(axis=0)]
        for i in range(len(hull.vertices)):
            for j in range(i + 1, len(hull.vertices)):
                samples.append(0.5 * (hull.vertices[i] + hull.vertices[j]))
        for s in samples:
            if hamiltonian.H(x, s) >= alpha + eps_energy:
                raise ValueError(
                    "hull interior pokes above the energy shell; the estimated "
                    "hull is inconsistent with a convex Hamiltonian")
    return np.array(on_shell)


def hull_zero_distance_field(field: ScalarField, radii=None,
                             csc: float | None = None) -> np.ndarray:
    """Distance from 0 to the estimated superdifferential, at every node.

    Vectorized in 1D; the 2D version loops over nodes and is intended for
    moderate grids.
    """
    grid = field.grid
    h = grid.h
    if radii is None:
        radii = (8 * h, 4 * h)
    radii = sorted(float(r) for r in radii)
    if csc is None:
        csc = semiconcavity_constant(field)
    if grid.dim == 1:
        u = field.values
        steps = [max(1, round(r / h)) for r in radii]
        rs = np.array([m * h for m in steps])

        def intercept(sign):
            quots = np.stack([(np.roll(u, -sign * m) - u) / (m * h) for m in steps])
            if len(steps) == 1:
                return quots[0]
            mean_r = rs.mean()
            mean_q = quots.mean(axis=0)
            slope = ((rs[:, None] - mean_r) * (quots - mean_q)).sum(axis=0) / ((rs - mean_r) ** 2).sum()
            return mean_q - slope * mean_r

        lo = intercept(+1)
        hi = -intercept(-1)
        mid = 0.5 * (lo + hi)
        lo, hi = np.minimum(lo, mid), np.maximum(hi, mid)
        return np.maximum.reduce([lo, -hi, np.zeros_like(lo)])
    dists = np.empty(grid.size)
    for node in range(grid.size):
        hull = superdifferential(field, node, radii, csc=csc)
        dists[node] = hull.distance_to_zero()
    return dists.reshape(grid.shape)


# -- sup-convolution ----------------------------------------------------------

@dataclass
class RegularizedField:
    """Sup-convolution u_lambda(x) = max_y [u(y) - |x - y|^2 / (2 lambda)]."""

    lam: float
    field: ScalarField
    base: ScalarField
    offsets: np.ndarray   # per-node maximizer offsets in cells, shape (*shape, dim)

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def gradient(self) -> np.ndarray:
        """Exact gradient surrogate (y* - x)/lambda from the window maximizer."""
        return self.offsets * self.base.grid.h / self.lam

    def gradient_norm(self) -> np.ndarray:
        g = self.gradient()
        return np.sqrt((g**2).sum(axis=-1))

    def maximizer_is_self(self) -> np.ndarray:
        return (self.offsets == 0).all(axis=-1)


def lasry_lions(field: ScalarField, lam: float, *, lip: float | None = None,
                csc: float | None = None, enforce_range: bool = True) -> RegularizedField:
    """Sup-convolution smoothing of a semiconcave grid field.

    Requires lam * C < 1 (C the measured semiconcavity constant) so critical
    points and values survive regularization; the search window has radius
    lam * Lip(u) + 2h and must fit in half a period.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    grid = field.grid
    u = field.values
    h = grid.h
    if csc is None:
        csc = semiconcavity_constant(field)
    if enforce_range and lam * csc >= 1.0:
        raise ValueError(f"lambda {lam} outside the valid range (lambda * {csc:.3g} >= 1)")
    if lip is None:
        lip = max(float(np.abs(np.roll(u, -1, axis=ax) - u).max()) / h
                  for ax in range(grid.dim))
    rho = lam * lip + 2 * h
    if rho >= np.pi:
        raise WindowError(f"window radius {rho:.3f} exceeds half a period; lambda too large")
    cells = int(np.ceil(rho / h))

    def axis_offsets():
        yield 0
        for k in range(1, cells + 1):
            yield k
            yield -k

    if grid.dim == 1:
        best = u.copy()
        best_off = np.zeros(grid.shape, dtype=int)
        for off in axis_offsets():
            if off == 0:
                continue
            cand = np.roll(u, -off) - (off * h) ** 2 / (2 * lam)
            mask = cand > best
            best[mask] = cand[mask]
            best_off[mask] = off
        offsets = best_off[..., None]
    else:
        mid = u.copy()
        k0 = np.zeros(grid.shape, dtype=int)
        for off in axis_offsets():
            if off == 0:
                continue
            cand = np.roll(u, -off, axis=0) - (off * h) ** 2 / (2 * lam)
            mask = cand > mid
            mid[mask] = cand[mask]
            k0[mask] = off
        best = mid.copy()
        k1 = np.zeros(grid.shape, dtype=int)
        for off in axis_offsets():
            if off == 0:
                continue
            cand = np.roll(mid, -off, axis=1) - (off * h) ** 2 / (2 * lam)
            mask = cand > best
            best[mask] = cand[mask]
            k1[mask] = off
        j0, j1 = np.meshgrid(np.arange(grid.N), np.arange(grid.N), indexing="ij")
        k0_eff = k0[j0, (j1 + k1) % grid.N]
        offsets = np.stack([k0_eff, k1], axis=-1)

    return RegularizedField(float(lam), ScalarField(grid, best), field, offsets)


# -- property verification ----------------------------------------------------

@dataclass
class PropertyCheck:
    name: str
    passed: bool
    witness: int | None = None
    details: dict = dataclass_field(default_factory=dict)


@dataclass
class LLReport:
    checks: list

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> PropertyCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failing(self):
        return [c.name for c in self.checks if not c.passed]

    def to_json_dict(self) -> dict:
        return {c.name: {"passed": c.passed, "witness": c.witness, **c.details}
                for c in self.checks}


def _local_max_mask(values: np.ndarray) -> np.ndarray:
    """Non-strict local maxima over the full (Moore) neighbor ring."""
    mask = np.ones_like(values, dtype=bool)
    dim = values.ndim
    shifts = [(s,) for s in (-1, 0, 1)] if dim == 1 else \
        [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)]
    for sh in shifts:
        if all(s == 0 for s in sh):
            continue
        rolled = values
        for ax, s in enumerate(sh):
            if s:
                rolled = np.roll(rolled, s, axis=ax)
        mask &= values >= rolled
    return mask


def _masks_equal_up_to_one_cell(a: np.ndarray, b: np.ndarray) -> tuple[bool, int | None]:
    from .grid import dilate_mask
    bad = a & ~dilate_mask(b, 1)
    if bad.any():
        return False, int(np.flatnonzero(bad.ravel())[0])
    bad = b & ~dilate_mask(a, 1)
    if bad.any():
        return False, int(np.flatnonzero(bad.ravel())[0])
    return True, None


def verify_LL_properties(field: ScalarField, lambdas, *, gtol: float | None = None,
                         n_samples: int = 16, csc: float | None = None,
                         value_tol: float = 1e-6) -> LLReport:
    """Check the sup-convolution approximation properties on a grid field.

    Monotone decrease (P2), critical point/value preservation (P4), local
    maximum preservation (P5), convergence of the regularized gradient to the
    minimal-norm element of the superdifferential at sampled nodes (P3), and a
    curvature-bound surrogate for the smoothing (P1).
    """
    lambdas = [float(l) for l in lambdas]
    if any(l2 >= l1 for l1, l2 in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda list must be strictly decreasing")
    grid = field.grid
    h = grid.h
    if csc is None:
        csc = semiconcavity_constant(field)
    if gtol is None:
        gtol = 2.0 * max(csc, 1e-12) * h
    regs = [lasry_lions(field, lam, csc=csc) for lam in lambdas]
    checks = []

    # P1 surrogate: curvature of u_lambda bounded on the 1/lambda scale
    p1_ok, p1_wit, measured = True, None, {}
    for lam, reg in zip(lambdas, regs):
        worst = 0.0
        for ax in range(grid.dim):
            v = reg.values
            second = (np.roll(v, -1, axis=ax) - 2 * v + np.roll(v, 1, axis=ax)) / h**2
            worst = max(worst, float(np.abs(second).max()))
        bound = 2.0 / lam + 2.0 * csc + 1.0
        measured[lam] = worst
        if worst > bound:
            p1_ok = False
    checks.append(PropertyCheck("P1", p1_ok, p1_wit, {"second_diff_sup": measured}))

    # P2: pointwise monotone decrease toward the base field
    p2_ok, p2_wit = True, None
    prev = None
    for reg in regs:
        if (reg.values < field.values - 1e-12).any():
            p2_ok = False
            p2_wit = int(np.argmin(reg.values - field.values))
        if prev is not None and (reg.values > prev + 1e-12).any():
            p2_ok = False
            p2_wit = int(np.argmax(reg.values - prev))
        prev = reg.values
    checks.append(PropertyCheck("P2", p2_ok, p2_wit))

    # P3: regularized gradient converges to the minimal-norm element
    flats = np.unique(np.linspace(0, grid.size - 1, n_samples).astype(int))
    p3_ok, p3_wit = True, None
    errors = {}
    for node in flats:
        hull = superdifferential(field, int(node), csc=csc)
        target = minimal_norm_element(hull)
        errs = []
        for reg in regs:
            g = reg.gradient().reshape(grid.size, grid.dim)[int(node)]
            errs.append(float(np.linalg.norm(g - target)))
        errors[int(node)] = errs
        for e1, e2 in zip(errs, errs[1:]):
            if e2 > e1 + 1e-9:
                p3_ok = False
                p3_wit = int(node)
    checks.append(PropertyCheck("P3", p3_ok, p3_wit, {"errors": errors}))

    # P4: same critical nodes (up to one cell) and same values there
    hull_dist = hull_zero_distance_field(field, csc=csc)
    hull_mask = hull_dist <= gtol
    p4_ok, p4_wit = True, None
    for reg in regs:
        reg_mask = reg.gradient_norm() <= gtol
        same, wit = _masks_equal_up_to_one_cell(reg_mask, hull_mask)
        if not same:
            p4_ok, p4_wit = False, wit
            continue
        both = reg_mask & hull_mask
        if both.any():
            dev = np.abs(reg.values[both] - field.values[both]).max()
            if dev > value_tol:
                p4_ok = False
                p4_wit = int(np.flatnonzero(both.ravel())[0])
    checks.append(PropertyCheck("P4", p4_ok, p4_wit, {"gtol": gtol}))

    # P5: same local maximum nodes
    base_max = _local_max_mask(field.values)
    p5_ok, p5_wit = True, None
    for reg in regs:
        reg_max = _local_max_mask(reg.values)
        if not np.array_equal(base_max, reg_max):
            p5_ok = False
            p5_wit = int(np.flatnonzero((base_max != reg_max).ravel())[0])
    checks.append(PropertyCheck("P5", p5_ok, p5_wit))

    return LLReport(checks)
