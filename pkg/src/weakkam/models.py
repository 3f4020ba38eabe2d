"""Mechanical Tonelli models on the torus.

All supported Lagrangians are of the form L(x, v) = |v|^2/2 + W(x) with W a
nonnegative trigonometric polynomial attaining zero, so the Legendre-dual
Hamiltonian is H(x, p) = |p|^2/2 - W(x) and every derivative is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import TorusGrid


class NonSuperlinearError(RuntimeError):
    """The fiberwise maximizer search of the Legendre transform diverged."""


class TrigPolynomial:
    """W(x) = constant + sum_k [a_k cos<k, x> + b_k sin<k, x>], integer frequencies."""

    def __init__(self, dim: int, terms=(), constant: float = 0.0):
        self.dim = int(dim)
        norm = []
        for freq, a, b in terms:
            if np.isscalar(freq):
                freq = (freq,)
            k = tuple(int(f) for f in freq)
            if len(k) != self.dim:
                raise ValueError(f"frequency {k} does not match dimension {self.dim}")
            norm.append((k, float(a), float(b)))
        self.terms = tuple(norm)
        self.constant = float(constant)
        self._extrema = None

    def value(self, *axes):
        if len(axes) != self.dim:
            raise ValueError("one coordinate array per axis expected")
        axes = [np.asarray(a, dtype=float) for a in axes]
        out = np.broadcast_arrays(*axes)[0] * 0.0 + self.constant if axes else self.constant
        for k, a, b in self.terms:
            phase = sum(ki * axes[i] for i, ki in enumerate(k))
            out = out + a * np.cos(phase) + b * np.sin(phase)
        return out

    def grad(self, *axes):
        """Tuple of partial derivatives, one array per axis."""
        axes = [np.asarray(a, dtype=float) for a in axes]
        outs = [np.zeros(np.broadcast_shapes(*[a.shape for a in axes])) for _ in range(self.dim)]
        for k, a, b in self.terms:
            phase = sum(ki * axes[i] for i, ki in enumerate(k))
            d = -a * np.sin(phase) + b * np.cos(phase)
            for i, ki in enumerate(k):
                if ki:
                    outs[i] = outs[i] + ki * d
        return tuple(outs)

    def value_at(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self.value(*x))

    def grad_at(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([float(g) for g in self.grad(*x)])

    def sample(self, grid: TorusGrid) -> np.ndarray:
        vals = self.value(*grid.coord_arrays())
        return np.broadcast_to(vals, grid.shape).astype(float)

    def _scan_extrema(self, per_axis: int = 2048):
        if self._extrema is None:
            n = per_axis if self.dim == 1 else 512
            probe = TorusGrid(self.dim, n)
            vals = self.sample(probe)
            self._extrema = (float(vals.min()), float(vals.max()))
        return self._extrema

    @property
    def min_value(self) -> float:
        return self._scan_extrema()[0]

    @property
    def max_value(self) -> float:
        return self._scan_extrema()[1]

    @property
    def is_axis_separable(self) -> bool:
        return all(sum(1 for ki in k if ki) <= 1 for k, _, _ in self.terms)


@dataclass(frozen=True)
class LagrangianModel:
    """Tonelli Lagrangian of mechanical type on the torus."""

    dim: int
    potential: TrigPolynomial
    kind: str = "custom"

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        if self.potential.dim != self.dim:
            raise ValueError("potential dimension mismatch")

    def L(self, x, v) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return float(0.5 * np.dot(v, v) + self.potential.value_at(x))

    def dLdv(self, x, v) -> np.ndarray:
        return np.atleast_1d(np.asarray(v, dtype=float)).copy()

    def dLdx(self, x, v) -> np.ndarray:
        return self.potential.grad_at(x)

    def velocity_bound(self, c) -> float:
        """Upper bound for speeds of action minimizers at cohomology c.

        On the critical energy shell |c + Du|^2 = 2(alpha(c) + W) and
        alpha(c) <= |c|^2/2, so |v| = |p| <= sqrt(|c|^2 + 2 max W).
        """
        c = np.atleast_1d(np.asarray(c, dtype=float))
        wmax = max(self.potential.max_value, 0.0)
        return float(np.sqrt(np.dot(c, c) + 2.0 * wmax))

    def hamiltonian(self) -> "HamiltonianModel":
        return mechanical_hamiltonian(self.potential)

    # numeric witnesses for the Tonelli conditions, used by the test suite
    def convexity_gap(self, samples=32, dv: float = 1e-3, rng=None) -> float:
        rng = rng or np.random.default_rng(0)
        worst = np.inf
        for _ in range(samples):
            x = rng.uniform(0, 2 * np.pi, self.dim)
            v = rng.uniform(-3, 3, self.dim)
            for ax in range(self.dim):
                e = np.zeros(self.dim)
                e[ax] = dv
                second = (self.L(x, v + e) - 2 * self.L(x, v) + self.L(x, v - e)) / dv**2
                worst = min(worst, second)
        return float(worst)

    def superlinearity_ratio(self, speed: float = 4.0, samples: int = 32, rng=None) -> float:
        rng = rng or np.random.default_rng(1)
        worst = np.inf
        for _ in range(samples):
            x = rng.uniform(0, 2 * np.pi, self.dim)
            d = rng.normal(size=self.dim)
            d /= np.linalg.norm(d)
            worst = min(worst, self.L(x, speed * d) / speed)
        return float(worst)


class HamiltonianModel:
    """H(x, p) with its partial derivatives; supports momentum reversal."""

    def __init__(self, h_func, dhdp_func, dhdx_func, dim: int,
                 reversed_p: bool = False, potential: TrigPolynomial | None = None):
        self._h = h_func
        self._dhdp = dhdp_func
        self._dhdx = dhdx_func
        self.dim = int(dim)
        self.reversed_p = bool(reversed_p)
        self.potential = potential

    def H(self, x, p) -> float:
        return float(self._h(np.atleast_1d(np.asarray(x, float)),
                             np.atleast_1d(np.asarray(p, float))))

    def dHdp(self, x, p) -> np.ndarray:
        return np.atleast_1d(self._dhdp(np.atleast_1d(np.asarray(x, float)),
                                        np.atleast_1d(np.asarray(p, float)))).astype(float)

    def dHdx(self, x, p) -> np.ndarray:
        return np.atleast_1d(self._dhdx(np.atleast_1d(np.asarray(x, float)),
                                        np.atleast_1d(np.asarray(p, float)))).astype(float)


def mechanical_hamiltonian(potential: TrigPolynomial) -> HamiltonianModel:
    def h(x, p):
        return 0.5 * np.dot(p, p) - potential.value_at(x)

    def dhdp(x, p):
        return p.copy()

    def dhdx(x, p):
        return -potential.grad_at(x)

    return HamiltonianModel(h, dhdp, dhdx, potential.dim, potential=potential)


def reversed_hamiltonian(hm: HamiltonianModel) -> HamiltonianModel:
    """The momentum-reversed Hamiltonian (x, p) -> H(x, -p); an involution."""
    base_h, base_dp, base_dx = hm._h, hm._dhdp, hm._dhdx
    return HamiltonianModel(
        lambda x, p: base_h(x, -p),
        lambda x, p: -np.atleast_1d(base_dp(x, -p)),
        lambda x, p: np.atleast_1d(base_dx(x, -p)),
        hm.dim,
        reversed_p=not hm.reversed_p,
        potential=hm.potential,
    )


def hamiltonian_vector_field(hm: HamiltonianModel, x, p):
    """(dx/dt, dp/dt) = (dH/dp, -dH/dx)."""
    return hm.dHdp(x, p), -hm.dHdx(x, p)


def legendre(model: LagrangianModel, x, p, tol: float = 1e-12, max_iter: int = 60):
    """Fiberwise Legendre transform: value H(x, p) and the maximizing velocity.

    Newton iteration on dL/dv = p (exact in one step for mechanical models);
    a runaway iterate is reported as a non-superlinear model.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    v = p.copy()
    scale = 1.0 + float(np.linalg.norm(p))
    for _ in range(max_iter):
        g = model.dLdv(x, v) - p
        if np.linalg.norm(g) < tol:
            break
        dv = 1e-6
        jac = np.zeros((model.dim, model.dim))
        for ax in range(model.dim):
            e = np.zeros(model.dim)
            e[ax] = dv
            jac[:, ax] = (model.dLdv(x, v + e) - model.dLdv(x, v - e)) / (2 * dv)
        try:
            v = v - np.linalg.solve(jac, g)
        except np.linalg.LinAlgError as exc:
            raise NonSuperlinearError("degenerate fiber Hessian") from exc
        if np.linalg.norm(v) > 1e6 * scale:
            raise NonSuperlinearError("maximizer search diverged")
    else:
        raise NonSuperlinearError("maximizer search did not converge")
    value = float(np.dot(p, v)) - model.L(x, v)
    return value, v


# -- builtin families --------------------------------------------------------

def pendulum() -> LagrangianModel:
    """L = v^2/2 + (1 - cos x); unique Aubry point at x = 0 for c = 0."""
    return LagrangianModel(1, TrigPolynomial(1, [((1,), -1.0, 0.0)], 1.0), "pendulum")


def free_model(dim: int = 1) -> LagrangianModel:
    """W = 0; alpha(c) = |c|^2/2 with constant solutions."""
    return LagrangianModel(dim, TrigPolynomial(dim, (), 0.0), "free")


def double_well() -> LagrangianModel:
    """W = (1 - cos 2x)/2 = sin^2 x; two Aubry classes {0} and {pi} at c = 0."""
    return LagrangianModel(1, TrigPolynomial(1, [((2,), -0.5, 0.0)], 0.5), "double_well")


def product_pendulum() -> LagrangianModel:
    """W(x1, x2) = (1 - cos x1) + (1 - cos x2) on the 2-torus."""
    terms = [((1, 0), -1.0, 0.0), ((0, 1), -1.0, 0.0)]
    return LagrangianModel(2, TrigPolynomial(2, terms, 2.0), "product_pendulum")


def double_well_pendulum() -> LagrangianModel:
    """Double well in x1 crossed with a pendulum in x2; two Aubry classes."""
    terms = [((2, 0), -0.5, 0.0), ((0, 1), -1.0, 0.0)]
    return LagrangianModel(2, TrigPolynomial(2, terms, 1.5), "double_well_pendulum")


def trig_model(dim: int, terms, constant: float = 0.0) -> LagrangianModel:
    """User model with validated potential: nonnegative and attaining zero."""
    pot = TrigPolynomial(dim, terms, constant)
    if pot.min_value < -1e-8:
        raise ValueError(f"potential must be nonnegative, found min {pot.min_value:.3e}")
    if pot.min_value > 1e-6:
        raise ValueError(f"potential must attain zero, found min {pot.min_value:.3e}")
    return LagrangianModel(dim, pot, "trig")


BUILTIN_FAMILIES = {
    "pendulum": pendulum,
    "free": free_model,
    "double_well": double_well,
    "product_pendulum": product_pendulum,
    "double_well_pendulum": double_well_pendulum,
}


def make_model(family: str, dim: int | None = None, terms=None, constant: float = 0.0):
    if family == "trig":
        if dim is None or terms is None:
            raise ValueError("trig family needs dim and terms")
        return trig_model(dim, terms, constant)
    if family not in BUILTIN_FAMILIES:
        raise ValueError(f"unknown model family {family!r}")
    if family == "free":
        return free_model(dim or 1)
    model = BUILTIN_FAMILIES[family]()
    if dim is not None and model.dim != dim:
        raise ValueError(f"family {family!r} is {model.dim}-dimensional")
    return model
