"""Weak KAM solutions by min-plus value iteration on a periodic grid.

One step of the discrete evolution is

    (Tu)(x) = min over stencil nodes y of  u(y) + tau * action(y -> x),

where the one-step action approximates tau * L_c(., (x - y)/tau).  The cost can
sample the potential at the source node ("endpoint"), at the segment midpoint
("midpoint"), or averaged over both ends ("trapezoid", the default: it removes
the O(tau * W) bias of the endpoint rule and stays axis-separable in 2D).
Backward and forward solutions share the machinery: reversing time for a
mechanical Lagrangian amounts to flipping the sign of c.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ScalarField, TorusGrid, TWO_PI
from .models import LagrangianModel

COST_FORMS = ("endpoint", "midpoint", "trapezoid")


class StencilError(ValueError):
    """Stencil radius incompatible with the time step or the grid."""


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = np.asarray(residual_history if residual_history is not None else [])


class DivergenceError(RuntimeError):
    """Point-source iteration escaped to -inf (alpha overestimated)."""


@dataclass
class SolverSettings:
    """Discretization and stopping parameters for the value iteration.

    The default time step tau = tau_scale * sqrt(h) balances the velocity
    quantization (O((h/tau)^2)) against the action sampling error (O(tau^2))
    so that the total discretization error is first order in h.
    """

    tau_scale: float = 1.0
    tau_factor: float | None = None
    tau: float | None = None
    stencil_safety: float = 1.5
    cost_form: str = "trapezoid"
    tol: float = 1e-10
    max_iter: int = 30000
    alpha_window: int = 50
    alpha_tol: float = 1e-7

    def resolve_tau(self, grid: TorusGrid) -> float:
        if self.tau is not None:
            return float(self.tau)
        if self.tau_factor is not None:
            return self.tau_factor * grid.h
        return self.tau_scale * math.sqrt(grid.h)


def stencil_radius(model: LagrangianModel, c, grid: TorusGrid, tau: float,
                   safety: float = 1.5) -> int:
    """Nodes per axis the stencil must span so minimizers stay interior."""
    vmax = model.velocity_bound(c)
    radius = max(1, math.ceil(safety * vmax * tau / grid.h))
    if 2 * radius + 1 > grid.N:
        raise StencilError(
            f"stencil radius {radius} wraps the grid (N={grid.N}); decrease tau")
    return radius


class LaxOleinikOperator:
    """One discrete evolution step for given model, cohomology, and time step."""

    def __init__(self, model: LagrangianModel, c, grid: TorusGrid, tau: float, *,
                 cost_form: str = "trapezoid", radius: int | None = None,
                 stencil_safety: float = 1.5, momentum_sign: float = 1.0):
        if cost_form not in COST_FORMS:
            raise ValueError(f"cost_form must be one of {COST_FORMS}")
        c = np.zeros(grid.dim) if c is None else np.atleast_1d(np.asarray(c, dtype=float))
        if c.shape != (grid.dim,):
            raise ValueError("cohomology vector dimension mismatch")
        self.model = model
        self.grid = grid
        self.tau = float(tau)
        self.cost_form = cost_form
        self.c_eff = momentum_sign * c
        self.radius = radius if radius is not None else stencil_radius(
            model, c, grid, tau, stencil_safety)
        vmax = model.velocity_bound(c)
        if self.radius * grid.h < vmax * tau:
            raise StencilError(
                f"stencil radius {self.radius} too small for speeds up to {vmax:.3g}")

        self.offsets = np.arange(-self.radius, self.radius + 1)
        vel = self.offsets * (grid.h / tau)
        self.kinetic = tau * 0.5 * vel**2
        # exact transport term: -tau * <c_eff, v> = -c_eff[axis] * offset * h
        self.drift = [-self.c_eff[ax] * self.offsets * grid.h for ax in range(grid.dim)]

        W = model.potential.sample(grid)
        if cost_form == "endpoint":
            self.source = tau * W
            self.terminal = None
        elif cost_form == "trapezoid":
            self.source = 0.5 * tau * W
            self.terminal = 0.5 * tau * W
        else:  # midpoint
            self.source = None
            self.terminal = None
            self._build_midpoint(model, grid)

    def _build_midpoint(self, model, grid):
        pot = model.potential
        if grid.dim == 1:
            ax = grid.axis()
            self._wmid = [self.tau * pot.value(ax - off * grid.h / 2.0)
                          for off in self.offsets]
        elif pot.is_axis_separable:
            # W(m1, m2) splits into per-axis shifted samples plus the constant
            ax = grid.axis()
            self._wmid_axis = []
            for axis in range(2):
                rows = []
                for off in self.offsets:
                    shifted = ax - off * grid.h / 2.0
                    acc = np.zeros_like(ax)
                    for k, a, b in pot.terms:
                        if k[axis]:
                            acc = acc + a * np.cos(k[axis] * shifted) + b * np.sin(k[axis] * shifted)
                    rows.append(self.tau * acc)
                self._wmid_axis.append(rows)
            self._mid_const = self.tau * pot.constant
        else:
            self._wmid_axis = None  # full stencil fallback per apply()

    def apply(self, u: np.ndarray) -> np.ndarray:
        if self.grid.dim == 1:
            return self._apply_1d(u)
        return self._apply_2d(u)

    def _apply_1d(self, u):
        if self.cost_form == "midpoint":
            best = None
            for j, off in enumerate(self.offsets):
                cand = np.roll(u, off) + self.kinetic[j] + self.drift[0][j] + self._wmid[j]
                best = cand if best is None else np.minimum(best, cand)
            return best
        A = u + self.source
        best = None
        for j, off in enumerate(self.offsets):
            cand = np.roll(A, off) + self.kinetic[j] + self.drift[0][j]
            best = cand if best is None else np.minimum(best, cand)
        if self.terminal is not None:
            best = best + self.terminal
        return best

    def _apply_2d(self, u):
        if self.cost_form == "midpoint":
            return self._apply_2d_midpoint(u)
        A = u + self.source
        mid = None
        for j, off in enumerate(self.offsets):
            cand = np.roll(A, off, axis=0) + self.kinetic[j] + self.drift[0][j]
            mid = cand if mid is None else np.minimum(mid, cand)
        out = None
        for j, off in enumerate(self.offsets):
            cand = np.roll(mid, off, axis=1) + self.kinetic[j] + self.drift[1][j]
            out = cand if out is None else np.minimum(out, cand)
        if self.terminal is not None:
            out = out + self.terminal
        return out

    def _apply_2d_midpoint(self, u):
        if self._wmid_axis is not None:
            mid = None
            for j, off in enumerate(self.offsets):
                cand = (np.roll(u, off, axis=0) + self.kinetic[j] + self.drift[0][j]
                        + self._wmid_axis[0][j][:, None])
                mid = cand if mid is None else np.minimum(mid, cand)
            out = None
            for j, off in enumerate(self.offsets):
                cand = (np.roll(mid, off, axis=1) + self.kinetic[j] + self.drift[1][j]
                        + self._wmid_axis[1][j][None, :])
                out = cand if out is None else np.minimum(out, cand)
            return out + self._mid_const
        # non-separable potential: joint stencil, evaluated per offset pair
        grid = self.grid
        X1, X2 = grid.coord_arrays()
        out = None
        for j0, off0 in enumerate(self.offsets):
            for j1, off1 in enumerate(self.offsets):
                wmid = self.tau * self.model.potential.value(
                    X1 - off0 * grid.h / 2.0, X2 - off1 * grid.h / 2.0)
                cand = (np.roll(np.roll(u, off0, axis=0), off1, axis=1)
                        + self.kinetic[j0] + self.kinetic[j1]
                        + self.drift[0][j0] + self.drift[1][j1] + wmid)
                out = cand if out is None else np.minimum(out, cand)
        return out


def lax_oleinik_step(model: LagrangianModel, c, u: ScalarField, tau: float, *,
                     cost_form: str = "trapezoid", radius: int | None = None,
                     stencil_safety: float = 1.5) -> ScalarField:
    """Apply one discrete evolution step to a scalar field."""
    op = LaxOleinikOperator(model, c, u.grid, tau, cost_form=cost_form,
                            radius=radius, stencil_safety=stencil_safety)
    return ScalarField(u.grid, op.apply(u.values))


@dataclass
class WeakKAMSolution:
    """Converged field, estimated critical constant, and iteration diagnostics."""

    u: ScalarField
    alpha: float
    c: np.ndarray
    direction: str
    residual: float
    iterations: int
    tau: float
    shifts: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def report(self) -> dict:
        return {
            "alpha": self.alpha,
            "residual": self.residual,
            "iterations": self.iterations,
            "direction": self.direction,
            "c": [float(v) for v in np.atleast_1d(self.c)],
            "tau": self.tau,
            "grid": {"n": self.u.grid.dim, "N": self.u.grid.N, "h": self.u.grid.h},
        }


def solve(model: LagrangianModel, c, grid: TorusGrid, direction: str = "backward",
          settings: SolverSettings | None = None) -> WeakKAMSolution:
    """Iterate the evolution with per-step normalization until stationary.

    The per-step shift s_k = -min(Tu - u) both pins the additive drift and
    estimates the critical constant: alpha = mean(s_k)/tau over a trailing
    window.  The forward solution solves the time-reversed problem (c -> -c
    for mechanical models) and is returned already negated, so that u_plus
    satisfies the forward weak KAM convention.
    """
    if direction not in ("backward", "forward"):
        raise ValueError("direction must be 'backward' or 'forward'")
    settings = settings or SolverSettings()
    tau = settings.resolve_tau(grid)
    sign = 1.0 if direction == "backward" else -1.0
    op = LaxOleinikOperator(model, c, grid, tau, cost_form=settings.cost_form,
                            stencil_safety=settings.stencil_safety,
                            momentum_sign=sign)
    u = np.zeros(grid.shape)
    shifts = []
    residuals = []
    converged = False
    iterations = 0
    for iterations in range(1, settings.max_iter + 1):
        Tu = op.apply(u)
        d = Tu - u
        m = float(d.min())
        s = -m
        residual = float(d.max() - m)
        shifts.append(s)
        residuals.append(residual)
        u = Tu + s
        if residual < settings.tol:
            converged = True
            break
    if not converged:
        raise NonConvergenceError(
            f"no fixed point after {settings.max_iter} steps "
            f"(residual {residuals[-1]:.3e})", residuals)
    window = np.array(shifts[-settings.alpha_window:])
    alpha = float(window.mean() / tau)
    if direction == "forward":
        u = -u
    values = u - u.min()
    return WeakKAMSolution(ScalarField(grid, values), alpha,
                           np.atleast_1d(np.asarray(c, dtype=float)), direction,
                           residuals[-1], iterations, tau, window)


def estimate_alpha(model: LagrangianModel, c, grid: TorusGrid,
                   settings: SolverSettings | None = None) -> tuple[float, int]:
    """Critical-constant estimate from the shift sequence alone.

    Runs the same normalized iteration as solve() but stops as soon as two
    consecutive trailing windows of the shift sequence agree to alpha_tol,
    which converges long before the field itself does when tau << h makes the
    field iteration crawl.  Returns (alpha, iterations).
    """
    settings = settings or SolverSettings()
    tau = settings.resolve_tau(grid)
    op = LaxOleinikOperator(model, c, grid, tau, cost_form=settings.cost_form,
                            stencil_safety=settings.stencil_safety)
    u = np.zeros(grid.shape)
    K = settings.alpha_window
    shifts = []
    for iteration in range(1, settings.max_iter + 1):
        Tu = op.apply(u)
        d = Tu - u
        s = -float(d.min())
        shifts.append(s)
        u = Tu + s
        if iteration >= 2 * K:
            recent = np.mean(shifts[-K:]) / tau
            previous = np.mean(shifts[-2 * K:-K]) / tau
            if abs(recent - previous) <= settings.alpha_tol:
                return float(recent), iteration
        if iteration >= K and float(d.max() - d.min()) < settings.tol:
            return float(np.mean(shifts[-K:]) / tau), iteration
    raise NonConvergenceError("alpha estimate did not stabilize", shifts)


def point_source_solution(model: LagrangianModel, c, source, grid: TorusGrid,
                          alpha: float, settings: SolverSettings | None = None,
                          direction: str = "backward") -> ScalarField:
    """Infinite-horizon connection cost from (or, reversed, to) a source node.

    Starts from a point-source field (0 at the source, a large sentinel
    elsewhere) and iterates u <- min(u, Tu + alpha*tau) monotonically.  With
    direction="forward" the transport is time-reversed, which yields the
    arrival cost field x -> cost(x, source).
    """
    settings = settings or SolverSettings()
    tau = settings.resolve_tau(grid)
    sign = 1.0 if direction == "backward" else -1.0
    op = LaxOleinikOperator(model, c, grid, tau, cost_form=settings.cost_form,
                            stencil_safety=settings.stencil_safety,
                            momentum_sign=sign)
    src = source if np.isscalar(source) else grid.nearest_node(source)
    c_arr = np.atleast_1d(np.asarray(c, dtype=float)) if c is not None else np.zeros(grid.dim)
    lip = model.velocity_bound(c_arr) + float(np.linalg.norm(c_arr))
    sentinel = 10.0 * TWO_PI * max(lip, 1.0)
    u = np.full(grid.shape, sentinel)
    u.ravel()[int(src)] = 0.0
    shift = alpha * tau
    residuals = []
    for _ in range(settings.max_iter):
        Tu = np.minimum(u, op.apply(u) + shift)
        residual = float((u - Tu).max())
        residuals.append(residual)
        u = Tu
        if u.min() < -0.5 * sentinel:
            raise DivergenceError("point-source field diverges; alpha overestimated")
        if residual < settings.tol:
            return ScalarField(grid, u)
    raise NonConvergenceError(
        f"point-source iteration stalled (residual {residuals[-1]:.3e})", residuals)


def domination_excess(model: LagrangianModel, c, sol: WeakKAMSolution,
                      radius: int | None = None) -> float:
    """Worst violation of the discrete domination inequality over the stencil.

    For every node x and stencil neighbor y the converged field must satisfy
    u(x) - u(y) <= tau * L_c(y, (x - y)/tau) + alpha * tau + slack; returns the
    max of u(x) - u(y) - cost - alpha*tau (endpoint one-step action).
    """
    grid = sol.u.grid
    sign = 1.0 if sol.direction == "backward" else -1.0
    op = LaxOleinikOperator(model, c, grid, sol.tau, cost_form="endpoint",
                            radius=radius, momentum_sign=sign)
    u = sol.u.values if sol.direction == "backward" else -sol.u.values
    worst = -np.inf
    shift = sol.alpha * sol.tau
    if grid.dim == 1:
        for j, off in enumerate(op.offsets):
            cost = np.roll(op.source, off) + op.kinetic[j] + op.drift[0][j]
            excess = u - np.roll(u, off) - cost - shift
            worst = max(worst, float(excess.max()))
    else:
        for j0, off0 in enumerate(op.offsets):
            for j1, off1 in enumerate(op.offsets):
                cost = (np.roll(np.roll(op.source, off0, axis=0), off1, axis=1)
                        + op.kinetic[j0] + op.kinetic[j1]
                        + op.drift[0][j0] + op.drift[1][j1])
                shifted = np.roll(np.roll(u, off0, axis=0), off1, axis=1)
                excess = u - shifted - cost - shift
                worst = max(worst, float(excess.max()))
    return worst
