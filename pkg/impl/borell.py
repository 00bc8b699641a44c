import numpy as np

from core.experiment import Experiment
from core.report import CheckRow
from engine.control import (
    PATH_FUNCTIONALS,
    ControlProblem,
    gap_shrink,
    gaussian_log_expectation,
    girsanov_identity_check,
    h_transform_policy,
    log_partition,
    verify_variational,
)
from engine.spectral import ZonalFunction, semigroup
from engine.stochastics import ConstantPolicy, FeedbackPolicy, PiecewisePolicy, ZeroPolicy


def _named(policy, name):
    policy.name = name
    return policy


def start_point(n, start):
    """pole: e_0. equator: e_1, so coordinate 0 starts at zero."""
    x0 = np.zeros(n + 1)
    if start == "pole":
        x0[0] = 1.0
    elif start == "equator":
        x0[1] = 1.0
    else:
        raise ValueError(f"start must be 'pole' or 'equator', got {start!r}")
    return x0


def _gap_rows(gaps, optimal_name, config, label, strict=True):
    """Equality for the optimal policy, lower bound for all, strict gap for the uncontrolled one."""
    m = config.tolerance_multiplier
    rows = []
    for gap in gaps:
        if gap.policy == optimal_name:
            rows.append(CheckRow.within(f"{label} gap[{gap.policy}]", gap.gap, 0.0, gap.band(m), gap.stderr))
        rows.append(CheckRow.at_least(f"{label} lower_bound[{gap.policy}]", gap.gap, 0.0, m * gap.stderr,
                                      gap.stderr))
        if strict and gap.policy == "zero":
            rows.append(CheckRow.at_least(f"{label} zero_policy_gap_positive", gap.gap, m * gap.stderr, 0.0,
                                          gap.stderr))
    return rows


def _shrink_rows(shrink, config, label, logger):
    """Coarse/fine gap ratio of the optimal policy, once the fine gap stands above the noise."""
    m = config.tolerance_multiplier
    if not shrink.resolved(m):
        logger.info(f"{label}: gap {shrink.fine_gap:.3g} within {m} s.e. ({shrink.fine_stderr:.3g}), "
                    f"no dt-refinement ratio")
        return []
    low, high = shrink.expected_range()
    return [CheckRow.in_range(f"{label} gap shrink ratio (dt x{shrink.factor})", shrink.ratio, low, high)]


class BorellEuclidean(Experiment):
    name = "borell-euclidean"
    module = "engine.control"
    anchor = "Borell formula in R^n"
    statement = "log E e^{f(B_T)} = sup_u E[f(B_T + U_T) - 1/2 |U|^2] in R^n, optimum at the h-transform"
    defaults = {
        "n": 1, "horizon": 1.0, "steps": 1000, "paths": 100_000,
        "params": {"a": 1.0, "rates": [0.0, 0.5, 1.5], "pieces": 4, "piecewise_scale": 1.0,
                   "piecewise_count": 3, "profile_tilt": 1.0},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        n, T = config.n, config.horizon
        rows = []
        total = 3

        self.step(1, total, "closed-form and quadrature log-partition", progress_callback)
        a = np.full(n, float(p["a"]))
        problem = ControlProblem.euclidean_linear(a, horizon=T)
        lhs = log_partition(problem)
        rows.append(CheckRow.within("log_partition closed_form", lhs.value, 0.5 * float(a @ a) * T, 1e-12))
        if n == 1:
            quad = gaussian_log_expectation(ZonalFunction.linear(a[0]), 0.0, T)
            rows.append(CheckRow.within("log_partition quadrature", float(quad), lhs.value, 1e-10))

        self.step(2, total, f"linear payoff a={p['a']} against {len(p['rates']) + 2 + p['piecewise_count']} policies",
                  progress_callback)
        batch = self.batch(config, n)
        optimal = h_transform_policy(problem, batch.grid.dt)
        policies = [optimal, ZeroPolicy(n)]
        policies += [_named(ConstantPolicy(np.full(n, float(c))), f"constant({c})") for c in p["rates"]]
        policies += [_named(PiecewisePolicy(n, T, p["pieces"], p["piecewise_scale"], config.seed + j), f"piecewise#{j}")
                     for j in range(p["piecewise_count"])]
        gaps = verify_variational(problem, policies, batch, lhs=lhs, optimal=optimal, workers=config.workers)
        rows += _gap_rows(gaps, optimal.name, config, "linear")

        self.step(3, total, "bounded smooth payoff sin(a x) against quadrature", progress_callback)
        b = float(p["profile_tilt"])
        profile = ZonalFunction(lambda t: np.sin(b * t), f"sin({b} t)", lambda t: b * np.cos(b * t))
        problem = ControlProblem.euclidean_profile(profile, n=n, horizon=T)
        lhs = log_partition(problem, method="quadrature")
        batch = batch.independent(1)
        optimal = h_transform_policy(problem, batch.grid.dt)
        gaps = verify_variational(problem, [optimal, ZeroPolicy(n)], batch, lhs=lhs, optimal=optimal,
                                  workers=config.workers)
        rows += _gap_rows(gaps, optimal.name, config, "profile")
        if progress_callback:
            progress_callback(100)
        return rows


class BorellSphere(Experiment):
    name = "borell-sphere"
    module = "engine.control"
    anchor = "Borell formula on a compact manifold (S^n)"
    statement = "log P_T(e^f)(x) = sup_u E[f(X_T^u) - 1/2 |u|^2] on S^n for zonal f, optimum at the h-transform"
    defaults = {
        "n": 2, "horizon": 1.0, "steps": 1000, "paths": 100_000,
        "params": {"tilts": [0.5, 1.0], "start": "equator", "coordinate": 0, "rates": [0.5],
                   "pieces": 4, "piecewise_scale": 1.0},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        n, T = config.n, config.horizon
        x0 = start_point(n, p["start"])
        S = semigroup(n)
        rows = []
        total = len(p["tilts"])
        for j, a in enumerate(p["tilts"], start=1):
            self.step(j, total, f"zonal payoff {a} x_{p['coordinate']} on S^{n}", progress_callback)
            problem = ControlProblem.sphere_zonal(n, ZonalFunction.linear(a), x0, T, p["coordinate"])
            lhs = log_partition(problem, method="spectral", spectral=S)
            batch = self.batch(config, n, stream=j)
            optimal = h_transform_policy(problem, batch.grid.dt, S)
            policies = [optimal, ZeroPolicy(n)]
            policies += [_named(ConstantPolicy(np.full(n, float(c))), f"constant({c})") for c in p["rates"]]
            policies.append(PiecewisePolicy(n, T, p["pieces"], p["piecewise_scale"], config.seed + j))
            gaps = verify_variational(problem, policies, batch, lhs=lhs, optimal=optimal, workers=config.workers)
            label = f"tilt={a}"
            rows += _gap_rows(gaps, optimal.name, config, label, strict=bool(a))
            rows += _shrink_rows(gap_shrink(problem, optimal, batch, lhs, workers=config.workers), config, label,
                                 self.logger)
        if progress_callback:
            progress_callback(100)
        return rows


class Girsanov(Experiment):
    name = "girsanov"
    module = "engine.control"
    anchor = "Girsanov change of drift"
    statement = "E[D_T H(B + U)] = E[H(B)] and E[D_T] = 1 for bounded adapted drifts"
    defaults = {
        "n": 1, "horizon": 1.0, "steps": 200, "paths": 100_000,
        "params": {"rate": 0.5, "feedback_scale": 0.5,
                   "functionals": ["one", "terminal", "midpoint", "running_max"]},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        n = config.n
        scale = float(p["feedback_scale"])
        policies = [
            _named(ConstantPolicy(np.full(n, float(p["rate"]))), f"constant({p['rate']})"),
            FeedbackPolicy(n, lambda t, x: scale * np.tanh(x), name=f"tanh-feedback({scale})",
                           params={"scale": scale}),
        ]
        rows = []
        total = len(policies) * len(p["functionals"])
        index = 0
        for policy in policies:
            for key in p["functionals"]:
                index += 1
                self.step(index, total, f"{policy.name} with H = {key}", progress_callback)
                check = girsanov_identity_check(policy, PATH_FUNCTIONALS[key], self.batch(config, n, stream=2 * index),
                                                config.workers, name=key)
                rows.append(CheckRow.within(f"girsanov[{policy.name}][{key}]", check.weighted, check.plain,
                                            self.band(config, check.stderr), check.stderr))
                if key == "one":
                    rows.append(CheckRow.within(f"E[D_T][{policy.name}]", check.weight_mean, 1.0,
                                                self.band(config, check.weight_stderr), check.weight_stderr))
        if progress_callback:
            progress_callback(100)
        return rows
