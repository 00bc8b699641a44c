import numpy as np
from scipy import stats

from core.experiment import Experiment
from core.report import CheckRow
from engine.geometry import SphereFrame, SpherePoint
from engine.inequalities import sample_uniform_sphere
from engine.simulate import check_aborts, jacobi_summary, moments, simulate_horizontal, simulate_jacobi
from engine.spectral import NuMeasure, ZonalFunction, laplacian_eigen_check, semigroup
from engine.stochastics import ZeroPolicy


def nu_cdf(n):
    """CDF of nu_n: (t + 1) / 2 is Beta(n/2, n/2)."""
    return lambda t: stats.beta.cdf(0.5 * (np.asarray(t) + 1.0), 0.5 * n, 0.5 * n)


def _sphere_start(n, s):
    x0 = np.zeros(n + 1)
    x0[0] = s
    x0[1] = np.sqrt(1.0 - s * s)
    return x0


def _terminal_coordinate(block):
    return {"coordinate": block.terminal[:, 0], "aborted": block.aborted}


class JacobiStationary(Experiment):
    name = "jacobi-stationary"
    module = "engine.simulate"
    anchor = "Jacobi diffusion of a sphere coordinate"
    statement = "the Jacobi diffusion matches Q_T from x0 and relaxes to nu_n (E X^2 = 1/(n+1))"
    defaults = {
        "n": 2, "horizon": 1.0, "steps": 1000, "paths": 100_000,
        "params": {"dimensions": [2, 3, 5], "x0": 0.5, "long_horizon": 20.0, "long_steps": 4000},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        x0 = float(p["x0"])
        rows = []
        total = 2 * len(p["dimensions"])
        index = 0
        for n in p["dimensions"]:
            S = semigroup(n)
            index += 1
            self.step(index, total, f"Jacobi n={n} at T={config.horizon} from x0={x0}", progress_callback)
            batch = self.batch(config, 1, stream=index)
            result = simulate_jacobi(n, ZeroPolicy(1), x0, batch, workers=config.workers)
            terminal = result["terminal"]
            (m1, se1), (m2, se2) = moments(terminal, orders=(1, 2))
            dt = batch.grid.dt
            mean_oracle = float(np.exp(-0.5 * n * config.horizon) * x0)
            second_oracle = float(S.apply(config.horizon, ZonalFunction.power(2), x0))
            rows.append(CheckRow.within(f"n={n} E[X_T]", m1, mean_oracle, self.band(config, se1, floor=dt), se1))
            rows.append(CheckRow.within(f"n={n} E[X_T^2]", m2, second_oracle, self.band(config, se2, floor=dt), se2))

            index += 1
            self.step(index, total, f"Jacobi n={n} long run T={p['long_horizon']}", progress_callback)
            grid = self.grid(config, p["long_horizon"], p["long_steps"])
            result = simulate_jacobi(n, ZeroPolicy(1), x0, self.batch(config, 1, grid=grid, stream=index),
                                     workers=config.workers)
            (m1, se1), (m2, se2) = moments(result["terminal"], orders=(1, 2))
            dt = grid.dt
            rows.append(CheckRow.within(f"n={n} stationary E[X]", m1, 0.0, self.band(config, se1, floor=dt), se1))
            rows.append(CheckRow.within(f"n={n} stationary E[X^2]", m2, 1.0 / (n + 1),
                                        self.band(config, se2, floor=dt), se2))
            clamp_rate = float(result["clamped"].sum()) / (grid.steps * result["clamped"].shape[0])
            self.logger.info(f"n={n}: clamped steps per path-step {clamp_rate:.2e}")
        if progress_callback:
            progress_callback(100)
        return rows


class MarginalNu(Experiment):
    name = "marginal-nu"
    module = "engine.spectral"
    anchor = "coordinate marginal nu_n and the Jacobi semigroup"
    statement = "coordinates of Brownian motion on S^n are Jacobi diffusions; the nu_n oracle is exact"
    defaults = {
        "n": 2, "horizon": 1.0, "steps": 1000, "paths": 100_000,
        "params": {"dimensions": [2, 3, 5], "start": 0.3, "sample_points": 100_000},
    }

    def _oracle_rows(self, n):
        S = semigroup(n)
        nu = NuMeasure(n)
        g = ZonalFunction.exponential(1.0)
        xs = np.linspace(-1.0, 1.0, 5)
        rows = [
            CheckRow.within(f"n={n} nu mass", nu.integrate(lambda t: np.ones_like(t)), 1.0, 1e-12),
            CheckRow.within(f"n={n} nu second moment", nu.moment(2), 1.0 / (n + 1), 1e-12),
        ]
        linear_error = np.max(np.abs(S.apply(0.7, ZonalFunction.linear(), xs) - np.exp(-0.35 * n) * xs))
        rows.append(CheckRow.at_most(f"n={n} Q_T x = e^(-nT/2) x", linear_error, 0.0, 1e-10))
        inner = ZonalFunction(lambda t: S.apply(0.3, g, t), "Q_0.3 e^t")
        split_error = np.max(np.abs(S.apply(0.2, inner, xs) - S.apply(0.5, g, xs)))
        rows.append(CheckRow.at_most(f"n={n} Q_s Q_t = Q_(s+t)", split_error, 0.0, 1e-9))
        evolved = ZonalFunction(lambda t: S.apply(0.4, g, t), "Q_0.4 e^t")
        rows.append(CheckRow.within(f"n={n} int Q_T g dnu = int g dnu", nu.integrate(evolved), nu.integrate(g), 1e-10))
        relaxed = np.max(np.abs(S.apply(50.0, g, xs) - S.measure.integrate(g)))
        rows.append(CheckRow.at_most(f"n={n} Q_50 g = int g dnu", relaxed, 0.0, 1e-10))
        rows.append(CheckRow.at_most(f"n={n} L x_i = -(n/2) x_i", laplacian_eigen_check(n, degree=1), 0.0, 1e-12))
        rows.append(CheckRow.at_most(f"n={n} L p_2 = -lambda_2 p_2", laplacian_eigen_check(n, degree=2), 0.0, 1e-10))
        gram_error = np.max(np.abs(S.gram() - np.eye(S.truncation + 1)))
        rows.append(CheckRow.at_most(f"n={n} orthonormal basis", gram_error, 0.0, 1e-10))
        return rows

    def run(self, config, progress_callback=None):
        p = config.params
        s = float(p["start"])
        m = config.tolerance_multiplier
        rows = []
        total = 3 * len(p["dimensions"])
        index = 0
        for n in p["dimensions"]:
            index += 1
            self.step(index, total, f"spectral oracle on S^{n}", progress_callback)
            rows += self._oracle_rows(n)

            index += 1
            self.step(index, total, f"uniform sampling marginal on S^{n}", progress_callback)
            points = sample_uniform_sphere(n, p["sample_points"], config.seed, stream=n)
            first = points.coords[:, 0]
            ks = stats.kstest(first, nu_cdf(n))
            critical = float(stats.kstwo.ppf(0.99, first.shape[0]))
            rows.append(CheckRow.at_most(f"n={n} uniform x_0 ~ nu_n (KS)", ks.statistic, critical, 0.0))

            index += 1
            self.step(index, total, f"coordinate of BM on S^{n} against the Jacobi diffusion", progress_callback)
            sphere_batch = self.batch(config, n, stream=2 * index)
            frame0 = SphereFrame.at(SpherePoint(_sphere_start(n, s)))
            sphere = simulate_horizontal(frame0, ZeroPolicy(n), sphere_batch, _terminal_coordinate, config.workers)
            check_aborts(sphere["aborted"], f"S^{n} marginal")
            jacobi = simulate_jacobi(n, ZeroPolicy(1), s, self.batch(config, 1, stream=2 * index + 1),
                                     jacobi_summary, config.workers)
            dt = sphere_batch.grid.dt
            for k, (sm, sse), (jm, jse) in zip((1, 2, 3, 4), moments(sphere["coordinate"][sphere.valid]),
                                                 moments(jacobi["terminal"])):
                rows.append(CheckRow.within(f"n={n} E[X^{k}] sphere vs Jacobi", sm - jm, 0.0,
                                            self.band(config, sse, jse, floor=dt), float(np.hypot(sse, jse))))
                exact = float(semigroup(n).apply(config.horizon, ZonalFunction.power(k), s))
                rows.append(CheckRow.within(f"n={n} E[X^{k}] sphere vs Q_T", sm, exact, m * sse + dt, sse))
        if progress_callback:
            progress_callback(100)
        return rows


class Convergence(Experiment):
    name = "convergence"
    module = "engine.simulate"
    anchor = "stochastic development of Brownian motion on S^n"
    statement = "the geodesic stepper is weak order one; Jacobi clamping gets rarer as dt shrinks"
    defaults = {
        "n": 5, "horizon": 0.4, "steps": 400, "paths": 400_000,
        "params": {"jacobi_n": 2, "jacobi_x0": 0.9, "jacobi_paths": 100_000},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        n, T = config.n, config.horizon
        m = config.tolerance_multiplier
        rows = []
        total = 2

        self.step(1, total, f"x_0 on S^{n} at dt = {T / config.steps:g} x (1, 2, 4)", progress_callback)
        if config.steps % 4:
            raise ValueError("convergence needs a step count divisible by 4")
        x0 = np.zeros(n + 1)
        x0[0] = 1.0
        frame0 = SphereFrame.at(SpherePoint(x0))
        batch = self.batch(config, n)
        runs = [simulate_horizontal(frame0, ZeroPolicy(n), batch.coarsened(f) if f > 1 else batch,
                                    _terminal_coordinate, config.workers) for f in (1, 2, 4)]
        for run in runs:
            check_aborts(run["aborted"], "convergence")
        valid = runs[0].valid & runs[1].valid & runs[2].valid
        values = [run["coordinate"][valid] for run in runs]
        exact = float(np.exp(-0.5 * n * T))
        fine_diff = values[1] - values[0]
        coarse_diff = values[2] - values[1]
        d_fine, d_fine_se = float(np.mean(fine_diff)), float(np.std(fine_diff, ddof=1) / np.sqrt(fine_diff.size))
        d_coarse = float(np.mean(coarse_diff))
        for f, v in zip((1, 2, 4), values):
            mean = float(np.mean(v))
            se = float(np.std(v, ddof=1) / np.sqrt(v.size))
            # weak order one: the error at dt is about the dt-to-2dt difference
            rows.append(CheckRow.within(f"E[x_0] dt={f * batch.grid.dt:g}", mean, exact,
                                        m * se + 2.0 * f * abs(d_fine), se))
        rows.append(CheckRow.at_least("bias resolved above noise", abs(d_fine), m * d_fine_se, 0.0, d_fine_se))
        ratio = d_coarse / d_fine if d_fine else float("inf")
        rows.append(CheckRow.in_range("weak error ratio per halving", ratio, 1.5, 3.0))

        self.step(2, total, "Jacobi clamp frequency across grids", progress_callback)
        jacobi_batch = self.batch(config, 1, paths=p["jacobi_paths"], stream=1)
        rates = []
        for f in (1, 2, 4):
            b = jacobi_batch.coarsened(f) if f > 1 else jacobi_batch
            result = simulate_jacobi(p["jacobi_n"], ZeroPolicy(1), p["jacobi_x0"], b, workers=config.workers)
            rates.append(float(result["clamped"].sum()) / (b.steps * b.paths))
        for fine, coarse, f in zip(rates, rates[1:], (1, 2)):
            rows.append(CheckRow.at_most(f"clamp rate dt={f * jacobi_batch.grid.dt:g} <= dt={2 * f * jacobi_batch.grid.dt:g}",
                                         fine, coarse, 0.0))
        if progress_callback:
            progress_callback(100)
        return rows
