"""Entropy side of the variational formula.

A law mu with density f against the Brownian law at time T is reached by the
Follmer drift grad log P_{T-t} f, and the drift energy equals the relative
entropy H(mu | reference). Targets here are Gaussian mixtures (and 1-D
log-profiles) in R^n and zonal densities on S^n, so that entropy, Fisher
information and the drift itself all have quadrature oracles.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid
from scipy.special import logsumexp, softmax

from core.logger import Logger
from engine.control import (
    ControlProblem,
    ZonalGradientPolicy,
    gaussian_log_expectation,
    gaussian_log_gradient,
)
from engine.simulate import (
    EuclideanModel,
    SpherePath,
    check_aborts,
    simulate_controlled_euclidean,
    simulate_horizontal,
)
from engine.spectral import ZonalFunction, as_zonal, semigroup
from engine.stochastics import FeedbackPolicy, ZeroPolicy, make_generator, mean_and_stderr

NEGATIVE_ENTROPY_TOLERANCE = 1e-10
MASS_TOLERANCE = 1e-8
KS_LEVEL = 0.01
MOMENT_ORDERS = (1, 2, 3, 4)
CDF_POINTS = 4001


class NegativeEntropyError(ArithmeticError):
    """A relative entropy came out negative beyond rounding."""


def _checked_entropy(value, what):
    if value < -NEGATIVE_ENTROPY_TOLERANCE:
        raise NegativeEntropyError(f"{what}: relative entropy {value:.3e} < 0")
    return float(value)


def _clamp_remaining(horizon, t, dt, key):
    tau = horizon - t
    if tau < dt * (1.0 - 1e-9):
        Logger().warning_once(key, f"remaining time {tau:.3g} < dt, drift evaluated at dt={dt:g}")
        return dt
    return tau


class GaussianMixtureTarget:
    """mu = sum_j w_j N(m_j, T I) with density f against gamma_T = N(0, T I).

    Every component has the closed form
    log P_tau f_j(x) = <m_j, x>/T - |m_j|^2/(2T) + tau |m_j|^2/(2T^2).
    """

    setting = "euclidean"

    def __init__(self, means, weights=None, horizon=1.0):
        means = np.atleast_2d(np.asarray(means, dtype=float))
        if weights is None:
            weights = np.full(means.shape[0], 1.0 / means.shape[0])
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (means.shape[0],) or np.any(weights <= 0):
            raise ValueError("mixture weights must be positive, one per component")
        if abs(weights.sum() - 1.0) > MASS_TOLERANCE:
            raise ValueError(f"mixture weights sum to {weights.sum()}, not 1")
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        self.means = means
        self.weights = weights
        self.horizon = float(horizon)
        self.n = means.shape[1]
        self.name = f"mixture({means.tolist()})"

    @classmethod
    def reference(cls, n=1, horizon=1.0):
        return cls(np.zeros((1, n)), horizon=horizon)

    @classmethod
    def shift(cls, m, horizon=1.0):
        return cls([np.atleast_1d(m)], horizon=horizon)

    @classmethod
    def symmetric_pair(cls, m=1.0, horizon=1.0):
        return cls([[-m], [m]], horizon=horizon)

    def _component_logs(self, x, tau):
        T = self.horizon
        sq = np.sum(self.means ** 2, axis=1)
        return (np.asarray(x, dtype=float) @ self.means.T) / T - sq / (2 * T) + tau * sq / (2 * T * T) \
            + np.log(self.weights)

    def log_semigroup(self, tau, x):
        """log P_tau f (x), x of shape (B, n)"""
        return logsumexp(self._component_logs(x, tau), axis=-1)

    def log_density(self, x):
        return self.log_semigroup(0.0, x)

    def grad_log_semigroup(self, tau, x):
        return softmax(self._component_logs(x, tau), axis=-1) @ self.means / self.horizon

    def policy(self, dt):
        def drift(t, x):
            tau = _clamp_remaining(self.horizon, t, dt, ("follmer-euclidean", self.name))
            return self.grad_log_semigroup(tau, x)

        return FeedbackPolicy(self.n, drift, "follmer", {"target": self.name})

    def sample(self, count, seed):
        rng = make_generator(seed, stream=(1 << 61))
        labels = rng.choice(len(self.weights), size=count, p=self.weights)
        return self.means[labels] + np.sqrt(self.horizon) * rng.standard_normal((count, self.n))

    def first_coordinate_cdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(self.weights * stats.norm.cdf(x, loc=self.means[:, 0], scale=np.sqrt(self.horizon)), axis=-1)

    def coordinate_moment(self, k):
        """E_mu[x_1^k] by Gauss-Hermite, per component."""
        nodes, w = _hermite()
        values = self.means[:, 0, None] + np.sqrt(self.horizon) * nodes
        return float(self.weights @ (values ** k @ w))

    def _component_expectation(self, fn):
        """E_mu[fn(x)] for fn of 1-D points; exact Gauss-Hermite per component (n = 1)."""
        nodes, w = _hermite()
        values = self.means[:, 0, None] + np.sqrt(self.horizon) * nodes
        return float(self.weights @ (fn(values.reshape(-1, 1)).reshape(values.shape) @ w))

    def entropy(self, samples=200_000, seed=0):
        """H(mu | gamma_T) = E_mu[log f]; quadrature for n = 1, exact-sample Monte Carlo otherwise."""
        if self.n == 1:
            return _checked_entropy(self._component_expectation(self.log_density), self.name), 0.0
        mean, se = mean_and_stderr(self.log_density(self.sample(samples, seed)))
        _checked_entropy(mean + 3 * se, self.name)
        return mean, se

    def fisher(self, samples=200_000, seed=0):
        """I(mu | gamma_T) = E_mu |grad log f|^2"""
        def sq(x):
            g = self.grad_log_semigroup(0.0, x)
            return np.sum(g * g, axis=-1)

        if self.n == 1:
            return self._component_expectation(sq), 0.0
        return mean_and_stderr(sq(self.sample(samples, seed)))


class ProfileTarget:
    """1-D target with density proportional to exp(log_profile) against gamma_T; drift by Gauss-Hermite."""

    setting = "euclidean"
    n = 1

    def __init__(self, log_profile, horizon=1.0):
        self.log_profile = as_zonal(log_profile)
        self.horizon = float(horizon)
        self.log_mass = float(gaussian_log_expectation(self.log_profile, 0.0, self.horizon))
        self.name = f"profile({self.log_profile.name})"

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        return self.log_profile(x[..., 0]) - self.log_mass

    def grad_log_semigroup(self, tau, x):
        x = np.asarray(x, dtype=float)
        if tau <= 0:
            return self.log_profile.deriv(x[..., 0])[..., None]
        return gaussian_log_gradient(self.log_profile, x[..., 0], tau)[..., None]

    def policy(self, dt):
        def drift(t, x):
            tau = _clamp_remaining(self.horizon, t, dt, ("follmer-profile", self.name))
            return self.grad_log_semigroup(tau, x)

        return FeedbackPolicy(1, drift, "follmer", {"target": self.name})

    def _grid(self):
        scale = np.sqrt(self.horizon)
        x = np.linspace(-12 * scale, 12 * scale, CDF_POINTS)
        density = stats.norm.pdf(x, scale=scale) * np.exp(self.log_profile(x) - self.log_mass)
        return x, density

    def first_coordinate_cdf(self, x):
        grid, density = self._grid()
        cdf = cumulative_trapezoid(density, grid, initial=0.0)
        return np.interp(x, grid, cdf / cdf[-1])

    def coordinate_moment(self, k):
        return self._expectation(lambda s: s ** k)

    def _expectation(self, fn):
        nodes, w = _hermite()
        s = np.sqrt(self.horizon) * nodes
        f = np.exp(self.log_profile(s) - self.log_mass)
        return float(np.dot(w, f * fn(s)))

    def entropy(self):
        value = self._expectation(lambda s: self.log_profile(s) - self.log_mass)
        return _checked_entropy(value, self.name), 0.0

    def fisher(self):
        return self._expectation(lambda s: self.log_profile.deriv(s) ** 2), 0.0


def _hermite(order=80):
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    return nodes, weights / np.sqrt(2.0 * np.pi)


class SphereZonalTarget:
    """Zonal target on S^n for Brownian motion started at x0, run for time T.

    reference="heat":    mu has density f(y) = g(y_i) / Q_T g(s) against delta_x P_T.
    reference="uniform": mu = g(y_i) / Z dm for the uniform m, so that
                         f(y) = g(y_i) / (Z q_T(s, y_i)) against delta_x P_T.
    Here s = x0_i and q_T is the coordinate heat kernel against nu_n.
    """

    setting = "sphere"

    def __init__(self, n, profile, x0, horizon, coordinate=0, reference="heat", spectral=None,
                 lower_bound=1e-6):
        if n < 2:
            raise ValueError("sphere targets need n >= 2")
        if reference not in ("heat", "uniform"):
            raise ValueError(f"reference must be 'heat' or 'uniform', got {reference!r}")
        self.n = int(n)
        self.profile = as_zonal(profile)
        self.x0 = np.asarray(x0, dtype=float)
        if self.x0.shape != (self.n + 1,) or abs(np.linalg.norm(self.x0) - 1.0) > 1e-9:
            raise ValueError("x0 must be a unit vector in R^{n+1}")
        self.horizon = float(horizon)
        self.coordinate = int(coordinate)
        self.reference = reference
        self.spectral = spectral or semigroup(self.n)
        self.start = float(self.x0[self.coordinate])
        self.name = f"{reference}:{self.profile.name}"

        values = self.profile(np.linspace(-1.0, 1.0, 201))
        if np.min(values) < lower_bound:
            raise ValueError(f"{self.profile.name} must stay above {lower_bound} on [-1, 1]")

        S = self.spectral
        if reference == "heat":
            self.mass = float(S.apply(self.horizon, self.profile, self.start))
        else:
            self.mass = S.measure.integrate(self.profile)
        self.density = ZonalFunction(self._density, f"f[{self.name}]", self._density_derivative)
        total = self.integrate(lambda t: np.ones_like(t))
        if abs(total - 1.0) > MASS_TOLERANCE:
            raise ValueError(f"target mass {total} differs from 1")

    def _kernel(self, t, derivative=False):
        return self.spectral.heat_kernel(self.horizon, self.start, t, derivative)

    def _density(self, t):
        if self.reference == "heat":
            return self.profile(t) / self.mass
        return self.profile(t) / (self.mass * self._kernel(t))

    def _log_density_slope(self, t):
        slope = self.profile.deriv(t) / self.profile(t)
        if self.reference == "uniform":
            q, dq = self._kernel(t, derivative=True)
            slope = slope - dq / q
        return slope

    def _density_derivative(self, t):
        return self._density(t) * self._log_density_slope(t)

    def law_density(self, t):
        """Density of the i-th coordinate of Y_T against nu_n."""
        if self.reference == "uniform":
            return self.profile(t) / self.mass
        return self._kernel(t) * self.profile(t) / self.mass

    def integrate(self, fn):
        """E_mu[fn(y_i)] by Gauss-Jacobi quadrature."""
        nodes = self.spectral.measure.nodes
        return float(np.dot(self.spectral.measure.weights, self.law_density(nodes) * fn(nodes)))

    def entropy(self):
        """H(mu | delta_x P_T) = E_mu[log f]"""
        return _checked_entropy(self.integrate(lambda t: np.log(self._density(t))), self.name), 0.0

    def fisher(self):
        """I(mu | delta_x P_T) = E_mu[(1 - y_i^2) (d/dt log f)^2]"""
        return self.integrate(lambda t: (1.0 - t * t) * self._log_density_slope(t) ** 2), 0.0

    def coordinate_moment(self, k):
        return self.integrate(lambda t: t ** k)

    def first_coordinate_cdf(self, x):
        grid = np.linspace(-1.0, 1.0, CDF_POINTS)
        density = self.law_density(grid) * self.spectral.measure.density(grid)
        cdf = cumulative_trapezoid(density, grid, initial=0.0)
        return np.interp(x, grid, cdf / cdf[-1])

    def reference_error(self):
        """max |q_T(s, .) - 1|: how far delta_x P_T is from the uniform measure."""
        grid = np.linspace(-1.0, 1.0, 401)
        return float(np.max(np.abs(self._kernel(grid) - 1.0)))

    def curvature_term(self):
        """C_T = Laplacian of P_T f at x0, from the spectral oracle."""
        return float(self.spectral.laplacian(self.horizon, self.density, self.start))

    def problem(self):
        return ControlProblem.sphere_zonal(self.n, self.density, self.x0, self.horizon, self.coordinate)

    def policy(self, dt):
        return ZonalGradientPolicy(self.problem(), self.density, dt, self.spectral, name="follmer")


@dataclass(frozen=True)
class MomentRow:
    order: int
    value: float
    stderr: float
    oracle: float


@dataclass(frozen=True)
class EntropyReport:
    entropy: float
    fisher: float
    drift_energy: float
    drift_energy_stderr: float
    energy_bias: float
    sample_entropy: float
    sample_entropy_stderr: float
    inverse_weight: float
    inverse_weight_stderr: float
    ks_statistic: float
    ks_critical: float
    paths: int
    moments: tuple = field(default_factory=tuple)
    reference_error: float = 0.0

    def energy_band(self, multiplier=3.0):
        return multiplier * self.drift_energy_stderr + abs(self.energy_bias)

    def energy_matches(self, multiplier=3.0):
        return abs(self.drift_energy - self.entropy) <= self.energy_band(multiplier)

    @property
    def law_matches(self):
        return self.ks_statistic <= self.ks_critical


def _follmer_summary(target):
    def summarize(block):
        terminal = block.terminal
        coordinate = terminal[:, getattr(target, "coordinate", 0)]
        if target.setting == "sphere":
            log_f = np.log(target.density(coordinate))
        else:
            log_f = target.log_density(terminal)
        return {
            "coordinate": coordinate,
            "energy": block.energy,
            "log_f": log_f,
            "aborted": block.aborted,
        }

    return summarize


def _run_follmer(target, batch, summarize, workers, **keep):
    policy = target.policy(batch.effective_grid.dt)
    if target.setting == "sphere":
        frame0 = target.problem().frame0
        return simulate_horizontal(frame0, policy, batch, summarize, workers, **keep)
    return simulate_controlled_euclidean(EuclideanModel.brownian(target.n), policy, np.zeros(target.n),
                                         batch, summarize, workers, **keep)


def _entropy_report(target, batch, workers, bias=True):
    if not np.isclose(batch.grid.horizon, target.horizon):
        raise ValueError("batch horizon differs from the target horizon")
    summarize = _follmer_summary(target)
    result = _run_follmer(target, batch, summarize, workers)
    check_aborts(result["aborted"], f"follmer sampler ({target.name})")
    valid = result.valid
    coordinate = result["coordinate"][valid]
    energy = result["energy"][valid]
    log_f = result["log_f"][valid]

    e_mean, e_se = mean_and_stderr(energy)
    s_mean, s_se = mean_and_stderr(log_f)
    w_mean, w_se = mean_and_stderr(np.exp(-log_f))
    energy_bias = 0.0
    if bias and batch.steps % 2 == 0:
        coarse = _run_follmer(target, batch.coarsened(2), summarize, workers)
        both = valid & coarse.valid
        energy_bias = float(np.mean(result["energy"][both] - coarse["energy"][both]))

    entropy, _ = target.entropy()
    fisher, _ = target.fisher()
    moments = []
    for k in MOMENT_ORDERS:
        value, se = mean_and_stderr(coordinate ** k)
        moments.append(MomentRow(k, value, se, target.coordinate_moment(k)))
    ks = stats.kstest(coordinate, target.first_coordinate_cdf)
    critical = float(stats.kstwo.ppf(1.0 - KS_LEVEL, coordinate.shape[0]))
    reference_error = target.reference_error() if target.setting == "sphere" else 0.0
    report = EntropyReport(
        entropy=entropy, fisher=fisher, drift_energy=e_mean, drift_energy_stderr=e_se,
        energy_bias=energy_bias, sample_entropy=s_mean, sample_entropy_stderr=s_se,
        inverse_weight=w_mean, inverse_weight_stderr=w_se,
        ks_statistic=float(ks.statistic), ks_critical=critical, paths=int(valid.sum()),
        moments=tuple(moments), reference_error=reference_error,
    )
    return result, report


def follmer_sample_euclidean(target, batch, workers=1, bias=True):
    """Simulate dX = dB + grad log P_{T-t} f(X) dt from 0; returns (first-coordinate samples, EntropyReport)."""
    if target.setting != "euclidean":
        raise ValueError("follmer_sample_euclidean needs a Euclidean target")
    result, report = _entropy_report(target, batch, workers, bias)
    return result["coordinate"][result.valid], report


def follmer_sample_sphere(target, batch, workers=1, bias=True):
    """The lifted sampler driven by the frame pull-back of grad log P_{T-t} f."""
    if target.setting != "sphere":
        raise ValueError("follmer_sample_sphere needs a sphere target")
    result, report = _entropy_report(target, batch, workers, bias)
    return result["coordinate"][result.valid], report


def relative_entropy(target):
    return target.entropy()[0]


def fisher_information(target):
    return target.fisher()[0]


@dataclass(frozen=True)
class BridgeLawCheck:
    functional: str
    follmer: float
    follmer_stderr: float
    reweighted: float
    reweighted_stderr: float

    @property
    def difference(self):
        return self.follmer - self.reweighted

    @property
    def stderr(self):
        return float(np.hypot(self.follmer_stderr, self.reweighted_stderr))


def _path_array(path):
    return path.base if isinstance(path, SpherePath) else path


def bridge_law_check(target, functional, batch, workers=1, name=None):
    """E[H(Y)] along Follmer paths against E[H(X) f(X_T)] along plain Brownian paths."""
    coordinate = getattr(target, "coordinate", 0)

    def terminal_log_f(path):
        terminal = path[-1]
        if target.setting == "sphere":
            return np.log(target.density(terminal[:, coordinate]))
        return target.log_density(terminal)

    def follmer_summary(block):
        return {"h": functional(_path_array(block.path)), "aborted": block.aborted}

    def reweighted_summary(block):
        path = _path_array(block.path)
        return {"h": functional(path) * np.exp(terminal_log_f(path)), "aborted": block.aborted}

    keep = "base" if target.setting == "sphere" else True
    left = _run_follmer(target, batch, follmer_summary, workers, keep_path=keep)
    check_aborts(left["aborted"], "bridge law")
    plain = batch.independent(2)
    zero = ZeroPolicy(target.n)
    if target.setting == "sphere":
        right = simulate_horizontal(target.problem().frame0, zero, plain, reweighted_summary, workers, keep_path=keep)
    else:
        right = simulate_controlled_euclidean(EuclideanModel.brownian(target.n), zero, np.zeros(target.n), plain,
                                              reweighted_summary, workers, keep_path=keep)
    l_mean, l_se = mean_and_stderr(left["h"][left.valid])
    r_mean, r_se = mean_and_stderr(right["h"][right.valid])
    return BridgeLawCheck(name or getattr(functional, "__name__", "H"), l_mean, l_se, r_mean, r_se)


@dataclass(frozen=True)
class DualBoundRow:
    test_function: str
    value: float   # int phi dmu - log P_T(e^phi)(x)
    entropy: float

    @property
    def holds(self):
        return self.value <= self.entropy + NEGATIVE_ENTROPY_TOLERANCE


def entropy_dual_bound(target, test_functions):
    """H(mu | delta_x P_T) >= int phi dmu - log P_T(e^phi)(x) for zonal phi; equality at phi = log f."""
    if target.setting != "sphere":
        raise ValueError("entropy_dual_bound works with zonal sphere targets")
    entropy, _ = target.entropy()
    log_f = ZonalFunction(lambda t: np.log(target.density(t)), "log f")
    rows = []
    for phi in list(test_functions) + [log_f]:
        phi = as_zonal(phi)
        value = target.integrate(phi) - np.log(target.spectral.apply(target.horizon, phi.exp(), target.start))
        rows.append(DualBoundRow(phi.name, float(value), entropy))
    return rows


def zonal_entropy_fisher(n, g, spectral=None):
    """H and I of mu = g(y_i)/Z dm against the uniform measure m on S^n."""
    S = spectral or semigroup(n)
    g = as_zonal(g)
    mass = S.measure.integrate(g)
    rho = lambda t: g(t) / mass  # noqa: E731
    entropy = S.measure.integrate(lambda t: rho(t) * np.log(rho(t)))
    fisher = S.measure.integrate(lambda t: rho(t) * (1.0 - t * t) * (g.deriv(t) / g(t)) ** 2)
    return _checked_entropy(entropy, g.name), float(fisher)


@dataclass(frozen=True)
class LogSobolevRow:
    n: int
    kappa: float
    tilt: float
    entropy: float
    fisher: float
    rhs_dimensional: float  # (n/2) log(1 + I/(n kappa))
    rhs_plain: float        # I / kappa
    tolerance: float = 1e-10

    @property
    def dimensional_holds(self):
        return self.entropy <= self.rhs_dimensional + self.tolerance

    @property
    def plain_holds(self):
        return self.entropy <= self.rhs_plain + self.tolerance

    @property
    def ordered(self):
        return self.rhs_dimensional <= self.rhs_plain + self.tolerance

    @property
    def tightness(self):
        return self.entropy / self.rhs_dimensional if self.rhs_dimensional > 0 else 1.0


def logsob_check(n, tilts=(0.25, 0.5, 1.0, 2.0), kappa=None, spectral=None):
    """Rows for the tilts e^{a t} against the uniform measure, kappa = n - 1 by default."""
    if n < 2:
        raise ValueError("the curvature bound kappa = n - 1 needs n >= 2")
    kappa = float(n - 1 if kappa is None else kappa)
    rows = []
    for a in tilts:
        entropy, fisher = zonal_entropy_fisher(n, ZonalFunction.exponential(a), spectral)
        rhs1 = 0.5 * n * np.log1p(fisher / (n * kappa))
        rows.append(LogSobolevRow(n, kappa, float(a), entropy, fisher, float(rhs1), fisher / kappa))
    return rows


@dataclass(frozen=True)
class AlphaTrajectory:
    """alpha(t_k) = E|grad F_{t_k}(Y_{t_k})|^2 along the Follmer paths, k = 0..N-1."""

    times: np.ndarray
    alpha: np.ndarray
    alpha_stderr: np.ndarray
    dt: float
    integral: float          # sum_k alpha_k dt = 2 E[energy]
    integral_stderr: float
    integral_bias: float
    entropy: float
    fisher: float
    curvature_term: float    # C_T
    kappa: float
    n: int

    @property
    def kappa_T(self):
        return self.kappa - 2.0 * self.curvature_term / self.n

    @property
    def horizon_long_enough(self):
        return self.n * self.kappa - 2.0 * self.curvature_term > 0

    @property
    def alpha_T(self):
        """alpha at the last grid time T - dt."""
        return float(self.alpha[-1])

    def integrated_bound(self, alpha_T=None):
        """n log(1 + alpha(T)(1 - e^{-kappa(T) T}) / (n kappa(T))), or None if n kappa <= 2 C_T."""
        if not self.horizon_long_enough:
            Logger().warning(
                f"n*kappa - 2*C_T = {self.n * self.kappa - 2 * self.curvature_term:.3g} <= 0, increase T"
            )
            return None
        a = self.alpha_T if alpha_T is None else alpha_T
        k = self.kappa_T
        T = self.times[-1] + self.dt
        return float(self.n * np.log1p(a * (1.0 - np.exp(-k * T)) / (self.n * k)))

    def pointwise_bound(self, alpha_T=None):
        """n kappa(T) alpha(T) / (e^{kappa(T)(T-t)} (n kappa(T) + alpha(T)) - alpha(T)) at every t_k."""
        if not self.horizon_long_enough:
            return None
        a = self.alpha_T if alpha_T is None else alpha_T
        k = self.kappa_T
        T = self.times[-1] + self.dt
        return self.n * k * a / (np.exp(k * (T - self.times)) * (self.n * k + a) - a)


def alpha_trajectory(target, batch, workers=1, kappa=None):
    """Follmer sphere sampler with per-step accumulation of |u_k|^2."""
    if target.setting != "sphere":
        raise ValueError("alpha_trajectory needs a sphere target")

    def summarize(block):
        sq = np.sum(block.rates ** 2, axis=-1)  # (N, B)
        sq = np.where(block.aborted[None, :], 0.0, sq)
        return {
            "sum": sq.sum(axis=1)[None],
            "sum_sq": (sq * sq).sum(axis=1)[None],
            "count": np.array([np.count_nonzero(~block.aborted)]),
            "energy": block.energy,
            "aborted": block.aborted,
        }

    result = _run_follmer(target, batch, summarize, workers, keep_rates=True)
    check_aborts(result["aborted"], "alpha trajectory")
    count = float(result["count"].sum())
    total = result["sum"].sum(axis=0)
    total_sq = result["sum_sq"].sum(axis=0)
    alpha = total / count
    variance = np.maximum(total_sq / count - alpha ** 2, 0.0) * count / max(count - 1.0, 1.0)
    alpha_se = np.sqrt(variance / count)

    energy = result["energy"][result.valid]
    e_mean, e_se = mean_and_stderr(energy)
    bias = 0.0
    if batch.steps % 2 == 0:
        coarse = _run_follmer(target, batch.coarsened(2), _follmer_summary(target), workers)
        both = result.valid & coarse.valid
        bias = 2.0 * float(np.mean(result["energy"][both] - coarse["energy"][both]))
    grid = batch.effective_grid
    return AlphaTrajectory(
        times=grid.times[:-1], alpha=alpha, alpha_stderr=alpha_se, dt=grid.dt,
        integral=2.0 * e_mean, integral_stderr=2.0 * e_se, integral_bias=bias,
        entropy=target.entropy()[0], fisher=target.fisher()[0],
        curvature_term=target.curvature_term(),
        kappa=float(target.n - 1 if kappa is None else kappa), n=target.n,
    )
