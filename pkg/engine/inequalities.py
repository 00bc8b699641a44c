"""Brascamp-Lieb inequality on S^n and the frame estimate behind it.

    int prod_i g_i(x_i) dsigma_n <= prod_i ( int g_i(x_i)^2 dsigma_n )^{1/2}

The left side is a Monte Carlo average over uniform points, the right side a
product of one-dimensional nu_n quadratures. The same bound holds at every
finite time for the heat semigroup started at x, which is checked as well.
"""
from dataclasses import dataclass

import numpy as np

from engine.geometry import SphereFrame, SpherePoint, TangentVector, frame_theta, project_tangent, theta_energy_ratio
from engine.simulate import check_aborts, simulate_horizontal
from engine.spectral import ZonalFunction, as_zonal, nu_quadrature, semigroup
from engine.stochastics import DriftRealization, TimeGrid, ZeroPolicy, make_generator, mean_and_stderr

POSITIVITY_FLOOR = 1e-6
TILT_RANGE = 2.0
DECOMPOSITION_SLACK = 1e-10


def sample_uniform_sphere(n, count, seed, stream=0):
    """i.i.d. uniform points on S^n (normalized standard Gaussians in R^{n+1})."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = make_generator(seed, stream=(1 << 60) + stream)
    return SpherePoint.from_vector(rng.standard_normal((count, n + 1)))


class BLInstance:
    """n + 1 positive zonal functions g_0..g_n."""

    def __init__(self, n, functions, lower_bound=POSITIVITY_FLOOR):
        functions = tuple(as_zonal(g) for g in functions)
        if len(functions) != n + 1:
            raise ValueError(f"S^{n} needs {n + 1} functions, got {len(functions)}")
        grid = np.linspace(-1.0, 1.0, 201)
        for g in functions:
            if np.min(g(grid)) < lower_bound:
                raise ValueError(f"{g.name} drops below {lower_bound} on [-1, 1]")
        self.n = n
        self.functions = functions

    @property
    def name(self):
        return " * ".join(g.name for g in self.functions)

    @classmethod
    def constant(cls, n, c=1.0):
        return cls(n, [ZonalFunction.constant(c)] * (n + 1))

    @classmethod
    def tilts(cls, n, a):
        a = np.broadcast_to(np.asarray(a, dtype=float), (n + 1,))
        return cls(n, [ZonalFunction.exponential(float(ai)) for ai in a])

    @classmethod
    def random_tilts(cls, n, seed, index=0, scale=TILT_RANGE):
        rng = make_generator(seed, stream=(1 << 59) + index)
        return cls.tilts(n, rng.uniform(-scale, scale, size=n + 1))

    @classmethod
    def concentrated(cls):
        """A polar spike times equatorial bumps on S^2: satisfies the L^2 bound, breaks the L^1 one."""
        return cls(2, [ZonalFunction.exponential(8.0),
                       ZonalFunction.gaussian_bump(8.0),
                       ZonalFunction.gaussian_bump(8.0)])

    def integrand(self, coords):
        coords = np.asarray(coords, dtype=float)
        out = np.ones(coords.shape[:-1])
        for i, g in enumerate(self.functions):
            out = out * g(coords[..., i])
        return out


@dataclass(frozen=True)
class BLReport:
    lhs: float
    lhs_stderr: float
    rhs: float
    l1_rhs: float
    multiplier: float = 3.0

    @property
    def ratio(self):
        return self.lhs / self.rhs

    @property
    def slack(self):
        return self.multiplier * self.lhs_stderr

    @property
    def passed(self):
        """lhs <= rhs + multiplier * s.e. of the Monte Carlo lhs"""
        return self.lhs <= self.rhs + self.slack

    @property
    def l1_violated(self):
        return self.lhs > self.l1_rhs + self.slack


def bl_lhs(instance, count=None, seed=0, samples=None):
    """Monte Carlo int prod g_i(x_i) dsigma_n, with its standard error."""
    if samples is None:
        if count is None:
            raise ValueError("give samples or count")
        samples = sample_uniform_sphere(instance.n, count, seed)
    coords = samples.coords if isinstance(samples, SpherePoint) else np.asarray(samples)
    return mean_and_stderr(instance.integrand(coords))


def bl_rhs(instance):
    """prod_i (int g_i^2 dnu_n)^{1/2}"""
    return float(np.prod([np.sqrt(nu_quadrature(instance.n, g.squared())) for g in instance.functions]))


def bl_l1_rhs(instance):
    """prod_i int g_i dnu_n, the bound with L^1 norms in place of L^2."""
    return float(np.prod([nu_quadrature(instance.n, g) for g in instance.functions]))


def bl_verify(instance, count, seed, multiplier=3.0):
    lhs, se = bl_lhs(instance, count, seed)
    return BLReport(lhs, se, bl_rhs(instance), bl_l1_rhs(instance), multiplier)


def bl_finite_horizon(instance, x0, batch, workers=1, multiplier=3.0):
    """P_T(prod g_i(x_i))(x0) <= prod_i Q_T(g_i^2)(x0_i)^{1/2}, left side by Brownian motion on S^n from x0."""
    x0 = np.asarray(x0, dtype=float)
    frame0 = SphereFrame.at(SpherePoint(x0))

    def summarize(block):
        return {"value": instance.integrand(block.terminal), "aborted": block.aborted}

    result = simulate_horizontal(frame0, ZeroPolicy(instance.n), batch, summarize, workers)
    check_aborts(result["aborted"], "finite-horizon Brascamp-Lieb")
    lhs, se = mean_and_stderr(result["value"][result.valid])
    S = semigroup(instance.n)
    T = batch.grid.horizon
    rhs = np.prod([np.sqrt(S.apply(T, g.squared(), x0[i])) for i, g in enumerate(instance.functions)])
    l1 = np.prod([S.apply(T, g, x0[i]) for i, g in enumerate(instance.functions)])
    return BLReport(lhs, se, float(rhs), float(l1), multiplier)


def frame_lemma_ratios(n, count, seed):
    """sum_i <theta^i, y>^2 / |y|^2 for random points x and tangent vectors y; never above 2."""
    x = sample_uniform_sphere(n, count, seed, stream=1)
    rng = make_generator(seed, stream=(1 << 60) + 2)
    y = project_tangent(x, rng.standard_normal((count, n + 1)))
    fallback = _fallback_direction(x)
    return theta_energy_ratio(x, y, fallback)


def _fallback_direction(x):
    """A unit tangent vector at x, used where grad P_i vanishes."""
    coords = x.coords
    d = coords.shape[-1]
    seed_vec = np.zeros_like(coords)
    seed_vec[..., 0] = 1.0
    flat = np.abs(coords[..., 0]) > 0.9
    seed_vec[flat, 0] = 0.0
    seed_vec[flat, 1 % d] = 1.0
    v = project_tangent(x, seed_vec).vec
    return TangentVector(x, v / np.linalg.norm(v, axis=-1, keepdims=True))


@dataclass(frozen=True)
class CoordinateDrifts:
    """u^i_k = <theta^i_{t_k}, Phi_{t_k} u_k>, shape (n+1, N, B)."""

    grid: TimeGrid
    rates: np.ndarray
    energy: np.ndarray        # (B,) energy of U
    coordinate_energy: np.ndarray  # (n+1, B)

    def realization(self, i):
        return DriftRealization(self.grid, self.rates[i][..., None])

    @property
    def total_coordinate_energy(self):
        return self.coordinate_energy.sum(axis=0)

    @property
    def bound_holds(self):
        """sum_i |U^i|^2 <= 2 |U|^2 on every path."""
        return self.total_coordinate_energy <= 2.0 * self.energy + DECOMPOSITION_SLACK


def drift_coordinate_decomposition(path, drift):
    """Split the ambient control Phi u along the unit gradients theta^i of the coordinates.

    `path` is a SpherePath with frames, `drift` a DriftRealization with rates
    (N, B, n) on the same grid. Where grad P_i vanishes theta^i is the first
    frame vector.
    """
    rates = np.asarray(drift.rates, dtype=float)
    N = path.grid.steps
    if rates.shape[0] != N or path.base.shape[0] != N + 1 or path.basis is None:
        raise ValueError("path (with frames) and drift must share the grid")
    if rates.ndim == 2:
        rates = rates[:, None, :]
    base = path.base if path.base.ndim == 3 else path.base[:, None, :]
    basis = path.basis if path.basis.ndim == 4 else path.basis[:, None]
    d = base.shape[-1]
    out = np.zeros((d, N) + rates.shape[1:-1])
    for k in range(N):
        x = SpherePoint(base[k])
        ambient = np.einsum("...dm,...m->...d", basis[k], rates[k])
        fallback = TangentVector(x, basis[k][..., :, 0])
        for i, theta in enumerate(frame_theta(x, fallback)):
            out[i, k] = np.sum(theta.vec * ambient, axis=-1)
    dt = path.grid.dt
    energy = 0.5 * np.sum(rates ** 2, axis=(0, -1)) * dt
    coordinate_energy = 0.5 * np.sum(out ** 2, axis=1) * dt
    return CoordinateDrifts(path.grid, out, energy, coordinate_energy)


@dataclass(frozen=True)
class CoordinateBoundRow:
    coordinate: int
    value: float      # E[f_i(X_T^i) - 1/4 |U^i|^2]
    stderr: float
    bound: float      # 1/2 log Q_T(e^{2 f_i})(x_i)

    def holds(self, multiplier=3.0):
        return self.value <= self.bound + multiplier * self.stderr


def coordinate_control_bound(profiles, x0, policy, batch, workers=1):
    """Per coordinate: E[f_i(X_T^{U,i}) - 1/4 |U^i|_H^2] <= 1/2 log Q_T(e^{2 f_i})(x0_i).

    `profiles` are the n + 1 zonal functions f_i; the paths are controlled
    sphere paths and U^i comes from drift_coordinate_decomposition.
    """
    profiles = [as_zonal(f) for f in profiles]
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0] - 1
    if len(profiles) != n + 1:
        raise ValueError(f"need {n + 1} profiles")
    frame0 = SphereFrame.at(SpherePoint(x0))

    def summarize(block):
        drifts = drift_coordinate_decomposition(block.path, DriftRealization(block.grid, block.rates))
        values = np.stack([f(block.terminal[:, i]) - 0.5 * drifts.coordinate_energy[i]
                           for i, f in enumerate(profiles)], axis=1)
        return {"values": values, "holds": drifts.bound_holds, "aborted": block.aborted}

    result = simulate_horizontal(frame0, policy, batch, summarize, workers, keep_path=True, keep_rates=True)
    check_aborts(result["aborted"], "coordinate control bound")
    valid = result.valid
    S = semigroup(n)
    rows = []
    for i, f in enumerate(profiles):
        value, se = mean_and_stderr(result["values"][valid, i])
        bound = 0.5 * np.log(S.apply(batch.grid.horizon, f.scaled(2.0).exp(), x0[i]))
        rows.append(CoordinateBoundRow(i, value, se, float(bound)))
    return rows, bool(np.all(result["holds"][valid]))
