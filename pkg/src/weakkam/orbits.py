"""Minimal homoclinic and class-connecting orbit tracing.

Orbits are integrated in the Hamiltonian formulation with a fixed-step
fourth-order Runge-Kutta scheme; starts come from matched limiting
differentials of a backward/forward solution pair at a critical point, and the
trace is checked against energy conservation, calibration of the action along
both half-orbits, and the distance of its ends to the Aubry set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .barrier import AubrySet, ConjugatePair, hetero_barrier
from .grid import ScalarField, TWO_PI, torus_distance, wrap
from .models import LagrangianModel
from .semiconcave import (lasry_lions, limiting_differentials,
                          semiconcavity_constant, superdifferential)


class MatchGapError(RuntimeError):
    """Criterion satisfied but no differential pair matches at this resolution."""


class StepRejectionError(RuntimeError):
    """Per-step energy jump too large: the step size is too coarse."""


@dataclass
class PhasePoint:
    """Phase-space point with full momentum c + local slope on the energy shell."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.p = np.atleast_1d(np.asarray(self.p, dtype=float))


def project_to_shell(model: LagrangianModel, x, p, alpha: float) -> np.ndarray:
    """Radial projection of a momentum onto the energy shell H(x, .) = alpha."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    radius_sq = 2.0 * (alpha + model.potential.value_at(x))
    if radius_sq <= 0.0:
        return np.zeros_like(p)
    r = math.sqrt(radius_sq)
    norm = float(np.linalg.norm(p))
    if norm == 0.0:
        out = np.zeros_like(p)
        out[0] = r
        return out
    return p * (r / norm)


def make_phase_point(model: LagrangianModel, x, p, alpha: float,
                     eps_energy: float = 1e-6, project: bool = True) -> PhasePoint:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if project:
        p = project_to_shell(model, x, p, alpha)
    ham = model.hamiltonian()
    if abs(ham.H(x, p) - alpha) > eps_energy:
        raise ValueError(
            f"phase point off the energy shell by {abs(ham.H(x, p) - alpha):.3e}")
    return PhasePoint(x, p)


@dataclass
class OrbitTrace:
    """Time-stamped phase-space samples with diagnostics and a verdict."""

    t: np.ndarray
    x: np.ndarray                # (k, dim), unwrapped coordinates
    p: np.ndarray                # (k, dim)
    energy: np.ndarray
    alpha: float
    energy_drift: float
    aubry_dist: np.ndarray
    verdict: str                 # homoclinic | connecting | inconclusive
    backward_class: int | None = None
    forward_class: int | None = None
    calib_residual_back: float | None = None
    calib_residual_fwd: float | None = None
    t0_index: int = 0

    def endpoint_distances(self) -> tuple[float, float]:
        return float(self.aubry_dist[0]), float(self.aubry_dist[-1])

    def to_csv(self, path, provenance: str = "adhoc"):
        dim = self.x.shape[1]
        cols = ["t"] + [f"x{i+1}" for i in range(dim)] + \
               [f"p{i+1}" for i in range(dim)] + ["H"]
        lines = [f"# provenance: {provenance}", ",".join(cols)]
        for i in range(len(self.t)):
            row = [self.t[i], *self.x[i], *self.p[i], self.energy[i]]
            lines.append(",".join(f"{v:.17g}" for v in row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def report(self) -> dict:
        d_back, d_fwd = self.endpoint_distances()
        return {
            "verdict": self.verdict,
            "energy_drift": self.energy_drift,
            "alpha": self.alpha,
            "backward_class": self.backward_class,
            "forward_class": self.forward_class,
            "endpoint_distance_backward": d_back,
            "endpoint_distance_forward": d_fwd,
            "calib_residual_back": self.calib_residual_back,
            "calib_residual_fwd": self.calib_residual_fwd,
            "samples": int(len(self.t)),
            "T": float(self.t[-1]),
            "dt": float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0,
        }


def _grad_terms(model: LagrangianModel):
    return [(k, a, b) for (k, a, b) in model.potential.terms]


def _rk4_half(model: LagrangianModel, x0, p0, T: float, dt: float, sign: float):
    """Fixed-step RK4 for dx = p, dp = -grad W, integrated to sign * T.

    Pure-scalar inner loop (the state has at most 4 components); returns
    arrays excluding the initial sample.
    """
    terms = _grad_terms(model)
    dim = model.dim
    steps = int(round(T / dt))
    hstep = sign * dt
    x = [float(v) for v in np.atleast_1d(x0)]
    p = [float(v) for v in np.atleast_1d(p0)]

    def force(xs):
        out = [0.0] * dim
        for k, a, b in terms:
            phase = sum(k[i] * xs[i] for i in range(dim))
            d = -a * math.sin(phase) + b * math.cos(phase)
            for i in range(dim):
                if k[i]:
                    out[i] += k[i] * d           # dW/dx_i
        return out

    xs_out = np.empty((steps, dim))
    ps_out = np.empty((steps, dim))
    for s in range(steps):
        # stage 1
        f1 = force(x)
        k1x = p
        k1p = [-g for g in f1]
        # stage 2
        x2 = [x[i] + 0.5 * hstep * k1x[i] for i in range(dim)]
        p2 = [p[i] + 0.5 * hstep * k1p[i] for i in range(dim)]
        f2 = force(x2)
        k2x = p2
        k2p = [-g for g in f2]
        # stage 3
        x3 = [x[i] + 0.5 * hstep * k2x[i] for i in range(dim)]
        p3 = [p[i] + 0.5 * hstep * k2p[i] for i in range(dim)]
        f3 = force(x3)
        k3x = p3
        k3p = [-g for g in f3]
        # stage 4
        x4 = [x[i] + hstep * k3x[i] for i in range(dim)]
        p4 = [p[i] + hstep * k3p[i] for i in range(dim)]
        f4 = force(x4)
        k4x = p4
        k4p = [-g for g in f4]
        x = [x[i] + hstep * (k1x[i] + 2 * k2x[i] + 2 * k3x[i] + k4x[i]) / 6.0
             for i in range(dim)]
        p = [p[i] + hstep * (k1p[i] + 2 * k2p[i] + 2 * k3p[i] + k4p[i]) / 6.0
             for i in range(dim)]
        xs_out[s] = x
        ps_out[s] = p
    return xs_out, ps_out


def trace(model: LagrangianModel, c, alpha: float, start: PhasePoint,
          T: float = 20.0, dt: float = 1e-3, aubry: AubrySet | None = None,
          eps_limit: float | None = None, eps_energy: float = 1e-6,
          energy_jump_factor: float = 10.0) -> OrbitTrace:
    """Integrate the Hamiltonian flow through a phase point over [-T, T].

    The verdict compares the two endpoint positions against the Aubry set:
    homoclinic when both ends land in the same class within eps_limit,
    connecting when the classes differ, inconclusive otherwise.  A stationary
    start (fixed point of the flow) is inconclusive by convention.
    """
    x0 = np.atleast_1d(np.asarray(start.x, dtype=float))
    p0 = np.atleast_1d(np.asarray(start.p, dtype=float))
    grad0 = model.potential.grad_at(x0)
    stationary = float(np.linalg.norm(p0) + np.linalg.norm(grad0)) < 1e-10

    if stationary:
        t = np.array([-T, 0.0, T])
        xs = np.tile(x0, (3, 1))
        ps = np.tile(p0, (3, 1))
    else:
        fw_x, fw_p = _rk4_half(model, x0, p0, T, dt, +1.0)
        bw_x, bw_p = _rk4_half(model, x0, p0, T, dt, -1.0)
        steps = fw_x.shape[0]
        t = np.concatenate([-dt * np.arange(steps, 0, -1), [0.0], dt * np.arange(1, steps + 1)])
        xs = np.concatenate([bw_x[::-1], x0[None, :], fw_x])
        ps = np.concatenate([bw_p[::-1], p0[None, :], fw_p])

    W = model.potential
    energy = 0.5 * (ps**2).sum(axis=1) - W.value(*[xs[:, i] for i in range(model.dim)])
    drift = float(np.abs(energy - alpha).max())
    if not stationary:
        jumps = np.abs(np.diff(energy))
        if jumps.max() > energy_jump_factor * eps_energy / max(len(t) - 1, 1):
            raise StepRejectionError(
                f"per-step energy jump {jumps.max():.3e} too large; decrease dt")

    if aubry is not None:
        dists = np.array([aubry.distance_to(wrap(xi)) for xi in xs])
    else:
        dists = np.full(len(t), np.nan)

    verdict = "inconclusive"
    back_cls = fwd_cls = None
    if stationary:
        verdict = "inconclusive"
    elif aubry is not None:
        if eps_limit is None:
            eps_limit = 3.0 * aubry.grid.h * math.sqrt(aubry.grid.dim)
        d_back, d_fwd = float(dists[0]), float(dists[-1])
        if d_back <= eps_limit and d_fwd <= eps_limit:
            back_cls = aubry.class_of_point(wrap(xs[0]))
            fwd_cls = aubry.class_of_point(wrap(xs[-1]))
            verdict = "homoclinic" if back_cls == fwd_cls else "connecting"

    t0_index = len(t) // 2
    return OrbitTrace(t, xs, ps, energy, float(alpha), drift, dists, verdict,
                      back_cls, fwd_cls, t0_index=t0_index)


_CAL_WINDOWS = ((0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0),
                (0.0, 0.5), (0.5, 1.0), (0.0, 1.0))


def verify_calibration(orbit: OrbitTrace, u_minus: ScalarField, u_plus: ScalarField,
                       model: LagrangianModel, c, alpha: float) -> tuple[float, float]:
    """Per-unit-time calibration residuals of the two half-orbits.

    On the backward half the backward solution must gain exactly the
    c-twisted action plus alpha * elapsed time between any two sample times;
    symmetrically for the forward solution on the forward half.  Residuals are
    maximized over a fixed family of subwindows of each half.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    dim = model.dim
    v = orbit.p                    # mechanical: velocity equals momentum
    W = model.potential.value(*[orbit.x[:, i] for i in range(dim)])
    lagr = 0.5 * (v**2).sum(axis=1) + W - v @ c
    t = orbit.t
    # cumulative trapezoid integral of the running cost
    dt_steps = np.diff(t)
    increments = 0.5 * (lagr[1:] + lagr[:-1]) * dt_steps
    action = np.concatenate([[0.0], np.cumsum(increments)])

    def residual(field: ScalarField, lo_idx: int, hi_idx: int) -> float:
        worst = 0.0
        for fa, fb in _CAL_WINDOWS:
            ia = lo_idx + int(round(fa * (hi_idx - lo_idx)))
            ib = lo_idx + int(round(fb * (hi_idx - lo_idx)))
            if ib <= ia:
                continue
            du = field.interpolate(wrap(orbit.x[ib])) - field.interpolate(wrap(orbit.x[ia]))
            act = action[ib] - action[ia]
            span = t[ib] - t[ia]
            res = abs(du - act - alpha * span) / span
            worst = max(worst, res)
        return worst

    mid = orbit.t0_index
    res_back = residual(u_minus, 0, mid)
    res_fwd = residual(u_plus, mid, len(t) - 1)
    orbit.calib_residual_back = res_back
    orbit.calib_residual_fwd = res_fwd
    return res_back, res_fwd


def match_candidates(u_minus: ScalarField, u_plus: ScalarField, node: int,
                     model: LagrangianModel, c, alpha: float,
                     eps_match: float = 0.05, eps_energy: float = 0.05,
                     radii=None) -> list[PhasePoint]:
    """All gap-minimal matched limiting-differential pairs at a node.

    Limiting differentials of the backward solution are matched against those
    of the forward solution; each minimal pair yields the midpoint momentum
    projected back onto the energy shell.  Candidates are ordered by momentum
    coordinates for determinism.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    grid = u_minus.grid
    ham = model.hamiltonian()
    minus_hull = superdifferential(u_minus, node, radii, c=c)
    neg_plus = ScalarField(grid, -u_plus.values)
    neg_hull = superdifferential(neg_plus, node, radii, c=-c)
    d_star_minus = limiting_differentials(minus_hull, ham, alpha, eps_energy)
    # D* of the forward solution: negate the limiting set of its negative
    d_star_plus = -limiting_differentials(
        neg_hull, _reversed_for_filter(ham), alpha, eps_energy)

    pairs = []
    for pm in d_star_minus:
        for pp in d_star_plus:
            pairs.append((float(np.linalg.norm(pm - pp)), tuple(pm), tuple(pp)))
    if not pairs:
        raise MatchGapError("no limiting differentials available at this node")
    gap = min(p[0] for p in pairs)
    if gap > eps_match:
        raise MatchGapError(
            f"criterion satisfied but match gap {gap:.3e} exceeds {eps_match:.3e} "
            "at this resolution")
    best = sorted(p for p in pairs if p[0] <= gap + 1e-12)
    x = grid.node_coords(node)
    out = []
    seen = []
    for _, pm, pp in best:
        p_mid = 0.5 * (np.array(pm) + np.array(pp))
        p_proj = project_to_shell(model, x, p_mid, alpha)
        if any(np.allclose(p_proj, s, atol=1e-10) for s in seen):
            continue
        seen.append(p_proj)
        out.append(PhasePoint(x, p_proj))
    out.sort(key=lambda ph: tuple(ph.p))
    return out


def _reversed_for_filter(ham):
    from .models import reversed_hamiltonian
    return reversed_hamiltonian(ham)


def match_differentials(pair: ConjugatePair, node: int, model: LagrangianModel,
                        c, alpha: float, eps_match: float = 0.05,
                        eps_energy: float = 0.05, radii=None) -> PhasePoint:
    """Best matched limiting-differential phase point at a critical node."""
    return match_candidates(pair.u_minus, pair.u_plus, node, model, c, alpha,
                            eps_match, eps_energy, radii)[0]


def _probe_improves(model, c, alpha, start: PhasePoint, aubry: AubrySet,
                    dt: float, steps: int = 10) -> bool:
    xs, _ = _rk4_half(model, start.x, start.p, steps * dt, dt, +1.0)
    d0 = aubry.distance_to(wrap(start.x))
    d1 = aubry.distance_to(wrap(xs[-1]))
    return d1 < d0 + 1e-12


def best_trace(model: LagrangianModel, c, alpha: float, u_minus: ScalarField,
               u_plus: ScalarField, aubry: AubrySet, node: int, *,
               T: float = 20.0, dt: float = 1e-3, eps_match: float = 0.05,
               eps_energy: float = 0.05, eps_limit: float | None = None):
    """Trace the matched candidates at a node, preferring the one whose
    forward leg immediately approaches the Aubry set.

    Returns (best trace, all traces); when no candidate passes the probe the
    traces are all returned with whatever verdicts they earned.
    """
    candidates = match_candidates(u_minus, u_plus, node, model, c, alpha,
                                  eps_match, eps_energy)
    passing = [_probe_improves(model, c, alpha, ph, aubry, dt) for ph in candidates]
    ordered = [ph for ph, ok in zip(candidates, passing) if ok] + \
              [ph for ph, ok in zip(candidates, passing) if not ok]
    traces = []
    for ph in ordered:
        orb = trace(model, c, alpha, ph, T, dt, aubry, eps_limit=eps_limit)
        traces.append(orb)
        if orb.verdict in ("homoclinic", "connecting"):
            return orb, traces
    return traces[0], traces


def connect_classes(model: LagrangianModel, c, alpha: float,
                    u1_minus: ScalarField, u2_plus: ScalarField,
                    aubry: AubrySet, *, class_1: int = 0, class_2: int = 1,
                    lam: float | None = None, U_radius: int = 3,
                    gtol: float | None = None, T: float = 20.0, dt: float = 1e-3,
                    eps_match: float = 0.05, eps_limit: float | None = None) -> OrbitTrace:
    """Connecting orbit between two distinct Aubry classes.

    Runs the critical-point machinery on the barrier between the elementary
    solutions of the two classes, matches differentials at each critical
    component, and returns the first trace whose backward limit lands in the
    first class and forward limit in the second.
    """
    from .critical import find_critical_points

    if aubry.n_classes < 2:
        raise ValueError("need at least two Aubry classes to connect")
    if class_1 == class_2:
        raise ValueError("classes must be distinct")
    B12 = hetero_barrier(u1_minus, u2_plus, class_1=class_1, class_2=class_2)
    csc = semiconcavity_constant(B12.field)
    if lam is None:
        lam = min(0.2, 0.5 / max(csc, 1e-9))
    reg = lasry_lions(B12.field, lam, csc=csc)
    points = find_critical_points(reg, aubry, U_radius=U_radius, gtol=gtol)
    if not points:
        raise RuntimeError("no critical component of the connecting barrier found")
    failures = []
    for pt in points:
        try:
            orb, _ = best_trace(model, c, alpha, u1_minus, u2_plus, aubry, pt.node,
                                T=T, dt=dt, eps_match=eps_match, eps_limit=eps_limit)
        except MatchGapError as exc:
            failures.append(str(exc))
            continue
        if (orb.verdict == "connecting" and orb.backward_class == class_1
                and orb.forward_class == class_2):
            return orb
        failures.append(f"node {pt.node}: verdict {orb.verdict}")
    raise RuntimeError("no connecting orbit found: " + "; ".join(failures))
