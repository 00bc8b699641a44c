"""Variational (Borell / Boue-Dupuis) verification.

For a terminal payoff f and start x,

    log P_T(e^f)(x) = sup_U E[ f(X_T^U) - 1/2 |U|_H^2 ]

and the supremum is attained by the feedback drift grad log P_{T-t}(e^f). The
left side comes from a closed form, Gauss-Hermite quadrature, the spectral
oracle or plain Monte Carlo; the right side from the controlled simulators.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from core.logger import Logger
from engine.geometry import SphereFrame, SpherePoint
from engine.simulate import (
    EuclideanModel,
    check_aborts,
    simulate_controlled_euclidean,
    simulate_horizontal,
    simulate_jacobi,
)
from engine.spectral import ZonalFunction, as_zonal, semigroup
from engine.stochastics import ConstantPolicy, DriftPolicy, ZeroPolicy, mean_and_stderr

SETTINGS = ("euclidean", "sphere", "jacobi")
MAX_RELATIVE_STDERR = 0.05
HERMITE_NODES = 80


class EstimateError(RuntimeError):
    """A Monte Carlo estimate is too noisy to be used as an oracle."""


@dataclass(frozen=True)
class ControlProblem:
    """Terminal payoff f(X_T) for one of the three diffusions.

    `profile` is a 1-D function g with f(x) = g(x[coordinate]); Euclidean
    problems may instead carry a linear payoff <linear, x>.
    """

    setting: str
    n: int
    x0: object
    horizon: float
    profile: Optional[ZonalFunction] = None
    coordinate: int = 0
    linear: Optional[np.ndarray] = None
    model: Optional[EuclideanModel] = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if (self.profile is None) == (self.linear is None):
            raise ValueError("give exactly one of profile or linear")
        if self.linear is not None and self.setting != "euclidean":
            raise ValueError("linear payoffs are Euclidean only")
        if self.setting == "jacobi" and abs(float(self.x0)) > 1:
            raise ValueError(f"x0 must lie in [-1, 1], got {self.x0}")
        if self.setting == "sphere":
            x0 = np.asarray(self.x0, dtype=float)
            if x0.shape != (self.n + 1,) or abs(np.linalg.norm(x0) - 1.0) > 1e-9:
                raise ValueError("sphere start must be a unit vector in R^{n+1}")
        if self.setting != "jacobi" and not 0 <= self.coordinate < self.ambient_dim:
            raise ValueError(f"coordinate {self.coordinate} out of range")

    @classmethod
    def euclidean_linear(cls, a, x0=None, horizon=1.0):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        x0 = np.zeros_like(a) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
        return cls("euclidean", a.shape[0], x0, horizon, linear=a)

    @classmethod
    def euclidean_profile(cls, g, n=1, x0=None, horizon=1.0, coordinate=0, model=None):
        x0 = np.zeros(n) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
        return cls("euclidean", n, x0, horizon, profile=as_zonal(g), coordinate=coordinate, model=model)

    @classmethod
    def sphere_zonal(cls, n, g, x0, horizon=1.0, coordinate=0):
        return cls("sphere", n, np.asarray(x0, dtype=float), horizon, profile=as_zonal(g), coordinate=coordinate)

    @classmethod
    def jacobi_zonal(cls, n, g, x0=0.0, horizon=1.0):
        return cls("jacobi", n, float(x0), horizon, profile=as_zonal(g))

    @property
    def ambient_dim(self):
        return self.n + 1 if self.setting == "sphere" else self.n

    @property
    def driving_dim(self):
        return 1 if self.setting == "jacobi" else self.n

    @property
    def start_coordinate(self):
        if self.setting == "jacobi":
            return float(self.x0)
        return float(np.asarray(self.x0)[self.coordinate])

    @property
    def frame0(self):
        return SphereFrame.at(SpherePoint(np.asarray(self.x0, dtype=float)))

    @property
    def euclidean_model(self):
        return self.model or EuclideanModel.brownian(self.n)

    def payoff(self, terminal):
        terminal = np.asarray(terminal, dtype=float)
        if self.linear is not None:
            return terminal @ self.linear
        if self.setting == "jacobi":
            return self.profile(terminal)
        return self.profile(terminal[:, self.coordinate])

    def constant_value(self):
        """c if the payoff is identically c, else None."""
        if self.linear is not None:
            return 0.0 if not np.any(self.linear) else None
        span = 1.0 if self.setting != "euclidean" else 4.0
        samples = self.profile(np.linspace(-span, span, 33))
        return float(samples[0]) if np.all(samples == samples[0]) else None

    def describe(self):
        name = f"<{self.linear.tolist()}, x>" if self.linear is not None else self.profile.name
        return {"setting": self.setting, "n": self.n, "payoff": name, "horizon": self.horizon}


def simulate(problem, policy, batch, summarize=None, workers=1, **keep):
    """Run the simulator matching the problem's setting."""
    if batch.dim != problem.driving_dim:
        raise ValueError(f"{problem.setting} needs a {problem.driving_dim}-dimensional batch, got {batch.dim}")
    if not np.isclose(batch.grid.horizon, problem.horizon):
        raise ValueError("batch horizon differs from the problem horizon")
    if problem.setting == "euclidean":
        return simulate_controlled_euclidean(problem.euclidean_model, policy, problem.x0, batch,
                                             summarize, workers, **keep)
    if problem.setting == "sphere":
        return simulate_horizontal(problem.frame0, policy, batch, summarize, workers, **keep)
    return simulate_jacobi(problem.n, policy, problem.x0, batch, summarize, workers, **keep)


@dataclass(frozen=True)
class ControlValueEstimate:
    mean: float
    std_error: float
    paths: int
    seed: int
    policy: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LogPartition:
    value: float
    stderr: float
    method: str


@dataclass(frozen=True)
class VariationalGap:
    policy: str
    lhs: LogPartition
    rhs: ControlValueEstimate
    bias: float = 0.0

    @property
    def gap(self):
        return self.lhs.value - self.rhs.mean

    @property
    def stderr(self):
        return float(np.hypot(self.lhs.stderr, self.rhs.std_error))

    def lower_bound_holds(self, multiplier=3.0):
        """lhs - rhs >= -multiplier * s.e.; a violation means a bug, not a counterexample."""
        return self.gap >= -multiplier * self.stderr

    def band(self, multiplier=3.0):
        return multiplier * self.stderr + abs(self.bias)

    def equality_holds(self, multiplier=3.0):
        return abs(self.gap) <= self.band(multiplier)


def _control_values(problem, policy, batch, workers=1, centered=False):
    """Per-path f(X_T^U) - energy, plus the validity mask.

    With `centered` the mean-zero sum_k <u_k, dB_k> is subtracted from every path.
    """

    def summarize(block):
        value = problem.payoff(block.terminal) - block.energy
        return {
            "value": value - block.martingale if centered else value,
            "aborted": block.aborted,
        }

    result = simulate(problem, policy, batch, summarize, workers)
    check_aborts(result["aborted"], f"{problem.setting} control value ({policy.name})")
    return result["value"], result.valid


def estimate_control_value(problem, policy, batch, workers=1):
    """E[f(X_T^U) - 1/2 |U|_H^2] with its standard error."""
    values, valid = _control_values(problem, policy, batch, workers)
    mean, se = mean_and_stderr(values[valid])
    grid = batch.effective_grid
    return ControlValueEstimate(mean, se, int(valid.sum()), batch.seed, policy.metadata(),
                                {"horizon": grid.horizon, "steps": grid.steps})


def _gauss_hermite():
    nodes, weights = np.polynomial.hermite_e.hermegauss(HERMITE_NODES)
    return nodes, weights / np.sqrt(2.0 * np.pi)


def gaussian_log_expectation(g, x, tau):
    """log E[e^{g(x + sqrt(tau) Z)}], Z ~ N(0, 1), by Gauss-Hermite quadrature (vectorized in x)."""
    nodes, weights = _gauss_hermite()
    x = np.asarray(x, dtype=float)
    arg = x[..., None] + np.sqrt(tau) * nodes
    return logsumexp(g(arg) + np.log(weights), axis=-1)


def gaussian_log_gradient(g, x, tau):
    """d/dx log E[e^{g(x + sqrt(tau) Z)}] = E[Z e^{g}] / (sqrt(tau) E[e^{g}])."""
    nodes, weights = _gauss_hermite()
    x = np.asarray(x, dtype=float)
    arg = x[..., None] + np.sqrt(tau) * nodes
    tilt = softmax(g(arg) + np.log(weights), axis=-1)
    return tilt @ nodes / np.sqrt(tau)


def log_partition(problem, method="auto", batch=None, spectral=None, workers=1):
    """log P_T(e^f)(x0).

    closed_form: linear Euclidean payoff under Brownian motion, <a, x0> + |a|^2 T / 2.
    quadrature:  Euclidean profile payoff under Brownian motion, Gauss-Hermite.
    spectral:    sphere or Jacobi profile payoff, Q_T(e^g) from the spectral oracle.
    mc:          log of the plain average of e^{f(X_T)}; EstimateError above 5% relative s.e.
    """
    constant = problem.constant_value()
    if constant is not None:
        return LogPartition(constant, 0.0, "constant")
    brownian = problem.setting == "euclidean" and problem.euclidean_model.is_brownian
    if method == "auto":
        if problem.setting == "euclidean":
            method = ("closed_form" if problem.linear is not None else "quadrature") if brownian else "mc"
        else:
            method = "spectral"

    if method == "closed_form":
        if problem.linear is None or not brownian:
            raise ValueError("closed form needs a linear payoff under Brownian motion")
        a = problem.linear
        value = float(a @ problem.x0 + 0.5 * (a @ a) * problem.horizon)
        return LogPartition(value, 0.0, method)
    if method == "quadrature":
        if problem.profile is None or not brownian:
            raise ValueError("quadrature needs a profile payoff under Brownian motion")
        value = gaussian_log_expectation(problem.profile, problem.start_coordinate, problem.horizon)
        return LogPartition(float(value), 0.0, method)
    if method == "spectral":
        if problem.setting == "euclidean":
            raise ValueError("the spectral oracle covers the sphere and Jacobi settings only")
        S = spectral or semigroup(problem.n)
        value = S.apply(problem.horizon, problem.profile.exp(), problem.start_coordinate)
        if value <= 0:
            raise ArithmeticError("spectral P_T(e^f) is not positive")
        return LogPartition(float(np.log(value)), 0.0, method)
    if method == "mc":
        if batch is None:
            raise ValueError("the mc method needs a BrownianBatch")
        return _mc_log_partition(problem, batch, workers)
    raise ValueError(f"unknown log-partition method {method!r}")


def _mc_log_partition(problem, batch, workers):
    def summarize(block):
        return {"payoff": problem.payoff(block.terminal), "aborted": block.aborted}

    result = simulate(problem, ZeroPolicy(problem.driving_dim), batch, summarize, workers)
    check_aborts(result["aborted"], "log-partition")
    payoff = result["payoff"][result.valid]
    shift = float(np.max(payoff))
    mean, se = mean_and_stderr(np.exp(payoff - shift))
    relative = se / mean
    if relative > MAX_RELATIVE_STDERR:
        raise EstimateError(f"relative s.e. of E[e^f] is {relative:.3f} > {MAX_RELATIVE_STDERR}")
    # delta method: s.e.(log m) ~ s.e.(m) / m
    return LogPartition(shift + float(np.log(mean)), relative, "mc")


class ZonalGradientPolicy(DriftPolicy):
    """u(t, state) = grad log Q_{T-t} h at the state, for a positive zonal h.

    Euclidean: e_i times the 1-D log-gradient; sphere: the frame pull-back of
    h'(x_i) (e_i - x_i x); Jacobi: sqrt(1 - x^2) h'(x). The remaining time is
    clamped to >= dt.
    """

    name = "zonal-gradient"

    def __init__(self, problem, density, dt, spectral=None, name=None, log_density=None):
        super().__init__(problem.driving_dim)
        self.problem = problem
        self.density = density
        self.log_density = log_density or (lambda s: np.log(density(s)))
        self.dt = dt
        if name:
            self.name = name
        self.logger = Logger()
        if problem.setting == "euclidean":
            if not problem.euclidean_model.is_brownian:
                raise ValueError("the Euclidean gradient policy needs Brownian motion")
            self.spectral = None
            self.coeffs = None
        else:
            self.spectral = spectral or semigroup(problem.n)
            self.coeffs = self.spectral.coefficients(density)

    @property
    def params(self):
        return {"density": self.density.name, "horizon": self.problem.horizon, "dt": self.dt}

    def remaining(self, t):
        tau = self.problem.horizon - t
        if tau < self.dt * (1.0 - 1e-9):
            self.logger.warning_once(
                ("tau-clamp", self.name),
                f"{self.name}: remaining time {tau:.3g} < dt, evaluated at dt={self.dt:g}",
            )
            tau = self.dt
        return tau

    def slope(self, tau, t_coord):
        """d/dt log Q_tau h at the coordinate values."""
        if self.problem.setting == "euclidean":
            return gaussian_log_gradient(self.log_density, t_coord, tau)
        return self.spectral.log_gradient(tau, self.density, t_coord, coeffs=self.coeffs)

    def __call__(self, t, state):
        tau = self.remaining(t)
        i = self.problem.coordinate
        if self.problem.setting == "euclidean":
            x = np.asarray(state, dtype=float)
            u = np.zeros_like(x)
            u[:, i] = self.slope(tau, x[:, i])
            return u
        if self.problem.setting == "jacobi":
            x = np.asarray(state, dtype=float)
            return (np.sqrt(np.maximum(0.0, 1.0 - x * x)) * self.slope(tau, x))[:, None]
        x = state.base.coords
        xi = x[:, i]
        grad = -xi[:, None] * x
        grad[:, i] += 1.0
        return state.pull(self.slope(tau, xi)[:, None] * grad)


def h_transform_policy(problem, dt, spectral=None):
    """The optimal drift grad log P_{T-t}(e^f)."""
    if problem.constant_value() is not None:
        return ZeroPolicy(problem.driving_dim)
    if problem.linear is not None:
        if not problem.euclidean_model.is_brownian:
            raise ValueError("closed-form h-transform needs Brownian motion")
        policy = ConstantPolicy(problem.linear)
        policy.name = "h-transform"
        return policy
    return ZonalGradientPolicy(problem, problem.profile.exp(), dt, spectral, name="h-transform",
                              log_density=problem.profile)


def smallest_coarsening(steps):
    """Smallest factor k > 1 dividing `steps`."""
    if steps < 2:
        raise ValueError(f"a bias estimate needs at least 2 steps, got {steps}")
    for k in range(2, int(np.sqrt(steps)) + 1):
        if steps % k == 0:
            return k
    return steps


def verify_variational(problem, policies, batch, lhs=None, optimal=None, workers=1):
    """One VariationalGap per policy, all on the same Brownian increments.

    For `optimal` (a policy object from the list) the O(dt) bias is estimated
    by rerunning it on a k times coarser grid built from the same increments,
    k the smallest divisor of the step count.
    """
    lhs = lhs or log_partition(problem, batch=batch.independent(7), workers=workers)
    gaps = []
    for policy in policies:
        values, valid = _control_values(problem, policy, batch, workers)
        mean, se = mean_and_stderr(values[valid])
        grid = batch.effective_grid
        estimate = ControlValueEstimate(mean, se, int(valid.sum()), batch.seed, policy.metadata(),
                                        {"horizon": grid.horizon, "steps": grid.steps})
        bias = 0.0
        if policy is optimal:
            k = smallest_coarsening(batch.steps)
            coarse, coarse_valid = _control_values(problem, policy, batch.coarsened(k), workers)
            both = valid & coarse_valid
            # weak order one: fine - coarse is about (k - 1) times the fine-grid bias
            bias = float(np.mean(values[both] - coarse[both])) / (k - 1)
        gaps.append(VariationalGap(policy.name, lhs, estimate, bias))
    return gaps


@dataclass(frozen=True)
class GapShrink:
    """Gap of one policy on the grid and on the `factor` times coarser grid of the same increments."""

    factor: int
    fine_gap: float
    fine_stderr: float
    coarse_gap: float
    coarse_stderr: float

    @property
    def ratio(self):
        return self.coarse_gap / self.fine_gap if self.fine_gap else float("inf")

    def resolved(self, multiplier=3.0):
        return abs(self.fine_gap) > multiplier * self.fine_stderr

    def expected_range(self):
        """Weak order one puts the ratio near `factor`; [1.5, 3] for a halving."""
        return 0.75 * self.factor, 1.5 * self.factor


def gap_shrink(problem, policy, batch, lhs=None, factor=None, workers=1):
    """lhs - E[f(X_T^U) - 1/2 |U|^2] at dt and at factor * dt.

    The paths are centered by the stochastic integral, which removes the noise
    of the h-transform value up to the discretization error.
    """
    factor = factor or smallest_coarsening(batch.steps)
    lhs = lhs or log_partition(problem, batch=batch.independent(7), workers=workers)
    fine, fine_valid = _control_values(problem, policy, batch, workers, centered=True)
    coarse, coarse_valid = _control_values(problem, policy, batch.coarsened(factor), workers, centered=True)
    both = fine_valid & coarse_valid
    fine_mean, fine_se = mean_and_stderr(fine[both])
    coarse_mean, coarse_se = mean_and_stderr(coarse[both])
    return GapShrink(factor, lhs.value - fine_mean, float(np.hypot(lhs.stderr, fine_se)),
                     lhs.value - coarse_mean, float(np.hypot(lhs.stderr, coarse_se)))


def terminal_value(path):
    """H(w) = w_T (first coordinate); path has shape (N+1, B, dim)."""
    return path[-1, :, 0]


def midpoint_value(path):
    return path[(path.shape[0] - 1) // 2, :, 0]


def running_max(path):
    return np.max(path[:, :, 0], axis=0)


def positive_terminal(path):
    return (path[-1, :, 0] > 0).astype(float)


def constant_one(path):
    return np.ones(path.shape[1])


PATH_FUNCTIONALS = {
    "one": constant_one,
    "terminal": terminal_value,
    "positive_terminal": positive_terminal,
    "midpoint": midpoint_value,
    "running_max": running_max,
}


@dataclass(frozen=True)
class GirsanovCheck:
    functional: str
    weighted: float
    weighted_stderr: float
    plain: float
    plain_stderr: float
    weight_mean: float
    weight_stderr: float

    @property
    def difference(self):
        return self.weighted - self.plain

    @property
    def stderr(self):
        return float(np.hypot(self.weighted_stderr, self.plain_stderr))


def girsanov_identity_check(policy, functional, batch, workers=1, name=None):
    """E[D_T H(B + U)] against E[H(B)] from an independent batch.

    D_T = exp(-sum <u_k, dB_k> - 1/2 sum |u_k|^2 dt) makes B + U a Brownian motion.
    """
    model = EuclideanModel.brownian(batch.dim)
    x0 = np.zeros(batch.dim)

    def weighted_summary(block):
        weight = np.exp(-block.martingale - block.energy)
        return {"weighted": weight * functional(block.path), "weight": weight, "aborted": block.aborted}

    def plain_summary(block):
        return {"plain": functional(block.path), "aborted": block.aborted}

    tilted = simulate_controlled_euclidean(model, policy, x0, batch, weighted_summary, workers, keep_path=True)
    check_aborts(tilted["aborted"], "girsanov")
    plain = simulate_controlled_euclidean(model, ZeroPolicy(batch.dim), x0, batch.independent(1),
                                          plain_summary, workers, keep_path=True)
    valid = tilted.valid
    w_mean, w_se = mean_and_stderr(tilted["weighted"][valid])
    d_mean, d_se = mean_and_stderr(tilted["weight"][valid])
    p_mean, p_se = mean_and_stderr(plain["plain"])
    return GirsanovCheck(name or getattr(functional, "__name__", "H"), w_mean, w_se, p_mean, p_se, d_mean, d_se)
