import numpy as np

from core.experiment import Experiment
from core.report import CheckRow
from engine.control import PATH_FUNCTIONALS
from engine.entropy import (
    GaussianMixtureTarget,
    ProfileTarget,
    SphereZonalTarget,
    bridge_law_check,
    entropy_dual_bound,
    follmer_sample_euclidean,
    follmer_sample_sphere,
)
from engine.spectral import ZonalFunction, semigroup
from impl.borell import start_point


def report_rows(label, report, config):
    """Energy = entropy, the exact law of Y_T, and E[1/f] = 1."""
    m = config.tolerance_multiplier
    rows = [
        CheckRow.within(f"{label} E[energy] = H", report.drift_energy, report.entropy, report.energy_band(m),
                        report.drift_energy_stderr),
        CheckRow.within(f"{label} E[log f(Y_T)] = H", report.sample_entropy, report.entropy,
                        m * report.sample_entropy_stderr + abs(report.energy_bias), report.sample_entropy_stderr),
        CheckRow.within(f"{label} E[1/f(Y_T)] = 1", report.inverse_weight, 1.0,
                        m * report.inverse_weight_stderr, report.inverse_weight_stderr),
        CheckRow.at_most(f"{label} KS statistic", report.ks_statistic, report.ks_critical, 0.0),
    ]
    for moment in report.moments:
        rows.append(CheckRow.within(f"{label} E[y^{moment.order}]", moment.value, moment.oracle,
                                    m * moment.stderr + abs(report.energy_bias), moment.stderr))
    return rows


class FollmerEuclidean(Experiment):
    name = "follmer-euclidean"
    module = "engine.entropy"
    anchor = "entropy as minimal drift energy (Follmer process)"
    statement = "the Follmer drift samples mu exactly at T with energy H(mu | gamma_T)"
    defaults = {
        "n": 1, "horizon": 1.0, "steps": 1000, "paths": 100_000,
        "params": {"shift": 1.0, "mixture": 1.0, "profile_amplitude": 1.0},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        n, T = config.n, config.horizon
        rows = []
        total = 4

        self.step(1, total, "reference target: zero drift", progress_callback)
        _, report = follmer_sample_euclidean(GaussianMixtureTarget.reference(n, T), self.batch(config, n, stream=1),
                                             config.workers, bias=False)
        rows.append(CheckRow.within("reference energy", report.drift_energy, 0.0, 1e-12))

        self.step(2, total, f"shifted Gaussian m={p['shift']}", progress_callback)
        m = np.full(n, float(p["shift"]))
        target = GaussianMixtureTarget.shift(m, T)
        _, report = follmer_sample_euclidean(target, self.batch(config, n, stream=2), config.workers)
        rows.append(CheckRow.within("shift H = |m|^2 / 2T", report.entropy, float(m @ m) / (2 * T), 1e-10))
        rows.append(CheckRow.within("shift I = |m|^2 / T^2", report.fisher, float(m @ m) / T ** 2, 1e-10))
        rows += report_rows("shift", report, config)

        self.step(3, total, f"symmetric mixture +-{p['mixture']}", progress_callback)
        target = GaussianMixtureTarget.symmetric_pair(float(p["mixture"]), T)
        _, report = follmer_sample_euclidean(target, self.batch(config, 1, stream=3), config.workers)
        rows += report_rows("mixture", report, config)

        self.step(4, total, f"profile exp({p['profile_amplitude']} sin 2x)", progress_callback)
        b = float(p["profile_amplitude"])
        profile = ZonalFunction(lambda t: b * np.sin(2.0 * t), f"{b}*sin(2t)", lambda t: 2.0 * b * np.cos(2.0 * t))
        _, report = follmer_sample_euclidean(ProfileTarget(profile, T), self.batch(config, 1, stream=4),
                                             config.workers)
        rows += report_rows("profile", report, config)
        if progress_callback:
            progress_callback(100)
        return rows


class FollmerSphere(Experiment):
    name = "follmer-sphere"
    module = "engine.entropy"
    anchor = "entropy dual formula on S^n"
    statement = "the lifted Follmer sampler on S^n reaches mu at T with energy H(mu | delta_x P_T)"
    defaults = {
        "n": 2, "horizon": 2.0, "steps": 1000, "paths": 100_000,
        "params": {"tilt": 1.0, "start": "equator", "coordinate": 0, "uniform_reference": True},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        n, T = config.n, config.horizon
        x0 = start_point(n, p["start"])
        S = semigroup(n)
        rows = []
        total = 4 if p["uniform_reference"] else 3

        self.step(1, total, "constant target: zero drift", progress_callback)
        target = SphereZonalTarget(n, ZonalFunction.constant(1.0), x0, T, p["coordinate"], spectral=S)
        _, report = follmer_sample_sphere(target, self.batch(config, n, stream=1), config.workers, bias=False)
        rows.append(CheckRow.within("constant target energy", report.drift_energy, 0.0, 1e-10))

        self.step(2, total, f"tilt exp({p['tilt']} y_{p['coordinate']})", progress_callback)
        target = SphereZonalTarget(n, ZonalFunction.exponential(float(p["tilt"])), x0, T, p["coordinate"], spectral=S)
        _, report = follmer_sample_sphere(target, self.batch(config, n, stream=2), config.workers)
        rows += report_rows("tilt", report, config)

        self.step(3, total, "entropy dual bound", progress_callback)
        tests = [ZonalFunction.linear(0.5), ZonalFunction.power(2),
                 ZonalFunction(np.sin, "sin(t)", np.cos), ZonalFunction.gaussian_bump(4.0)]
        for row in entropy_dual_bound(target, tests):
            if row.test_function == "log f":
                rows.append(CheckRow.within("dual bound equality at log f", row.value, row.entropy, 1e-10))
            else:
                rows.append(CheckRow.at_most(f"dual bound [{row.test_function}]", row.value, row.entropy, 1e-10))

        if p["uniform_reference"]:
            self.step(4, total, "uniform reference measure", progress_callback)
            target = SphereZonalTarget(n, ZonalFunction.exponential(float(p["tilt"])), x0, T, p["coordinate"],
                                       reference="uniform", spectral=S)
            self.logger.info(f"max |q_T - 1| = {target.reference_error():.3e} at T={T}")
            _, report = follmer_sample_sphere(target, self.batch(config, n, stream=3), config.workers)
            rows += report_rows("uniform-reference", report, config)
        if progress_callback:
            progress_callback(100)
        return rows


class BridgeLaw(Experiment):
    name = "bridge-law"
    module = "engine.entropy"
    anchor = "law of the Follmer process as a reweighted Brownian path"
    statement = "the Follmer path law is f(X_T) times the Brownian path law"
    defaults = {
        "n": 2, "horizon": 2.0, "steps": 500, "paths": 50_000,
        "params": {"tilt": 1.0, "start": "equator", "shift": 1.0,
                   "functionals": ["one", "positive_terminal", "midpoint", "running_max"]},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        n, T = config.n, config.horizon
        targets = [
            ("sphere", SphereZonalTarget(n, ZonalFunction.exponential(float(p["tilt"])), start_point(n, p["start"]),
                                         T, 0), n),
            ("euclidean", GaussianMixtureTarget.shift(float(p["shift"]), T), 1),
        ]
        rows = []
        total = len(targets) * len(p["functionals"])
        index = 0
        for label, target, dim in targets:
            for key in p["functionals"]:
                index += 1
                self.step(index, total, f"{label}: H = {key}", progress_callback)
                check = bridge_law_check(target, PATH_FUNCTIONALS[key], self.batch(config, dim, stream=4 * index),
                                         config.workers, name=key)
                rows.append(CheckRow.within(f"{label} bridge[{key}]", check.follmer, check.reweighted,
                                            self.band(config, check.stderr, floor=config.horizon / config.steps),
                                            check.stderr))
        if progress_callback:
            progress_callback(100)
        return rows
