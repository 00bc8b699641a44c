import numpy as np

from core.experiment import Experiment
from core.report import CheckRow
from engine.entropy import SphereZonalTarget, alpha_trajectory, logsob_check, zonal_entropy_fisher
from engine.spectral import ZonalFunction
from impl.borell import start_point


class LogSobolev(Experiment):
    name = "logsob"
    module = "engine.entropy"
    anchor = "dimensional log-Sobolev inequality on S^n"
    statement = "H <= (n/2) log(1 + I/(n kappa)) <= I/kappa for zonal tilts against the uniform measure on S^n"
    defaults = {
        "n": 2, "horizon": 1.0, "steps": 1, "paths": 1,
        "params": {"dimensions": [2, 3, 5], "tilts": [0.25, 0.5, 1.0, 2.0]},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        rows = []
        total = len(p["dimensions"])
        for j, n in enumerate(p["dimensions"], start=1):
            self.step(j, total, f"tilts {p['tilts']} on S^{n}", progress_callback)
            entropy, fisher = zonal_entropy_fisher(n, ZonalFunction.constant(1.0))
            rows.append(CheckRow.within(f"n={n} uniform H = 0", entropy, 0.0, 1e-12))
            rows.append(CheckRow.within(f"n={n} uniform I = 0", fisher, 0.0, 1e-12))
            for row in logsob_check(n, p["tilts"]):
                label = f"n={n} a={row.tilt}"
                self.logger.info(f"{label}: H/rhs = {row.tightness:.4f}")
                rows.append(CheckRow.at_most(f"{label} dimensional bound", row.entropy, row.rhs_dimensional,
                                             row.tolerance))
                rows.append(CheckRow.at_most(f"{label} plain bound", row.entropy, row.rhs_plain, row.tolerance))
                rows.append(CheckRow.at_most(f"{label} dimensional <= plain", row.rhs_dimensional, row.rhs_plain,
                                             row.tolerance))
        if progress_callback:
            progress_callback(100)
        return rows


class AlphaTrajectory(Experiment):
    name = "alpha-trajectory"
    module = "engine.entropy"
    anchor = "curvature bound along the Follmer flow"
    statement = "alpha(t) = E|u_t|^2 integrates to 2H, ends at I and stays below the curvature bounds"
    defaults = {
        "n": 2, "horizon": 4.0, "steps": 1000, "paths": 100_000,
        "params": {"tilt": 1.0, "start": "equator", "reference": "heat"},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        n, T = config.n, config.horizon
        m = config.tolerance_multiplier
        x0 = start_point(n, p["start"])
        rows = []
        total = 2

        self.step(1, total, "constant target", progress_callback)
        if p["reference"] == "heat":
            target = SphereZonalTarget(n, ZonalFunction.constant(1.0), x0, T)
            flat = alpha_trajectory(target, self.batch(config, n, stream=1), config.workers)
            rows.append(CheckRow.at_most("constant target max alpha", float(np.max(flat.alpha)), 0.0, 1e-10))

        self.step(2, total, f"tilt exp({p['tilt']} y_0)", progress_callback)
        target = SphereZonalTarget(n, ZonalFunction.exponential(float(p["tilt"])), x0, T, reference=p["reference"])
        traj = alpha_trajectory(target, self.batch(config, n, stream=2), config.workers)
        rows.append(CheckRow.within("int alpha dt = 2H", traj.integral, 2.0 * traj.entropy,
                                    m * traj.integral_stderr + abs(traj.integral_bias), traj.integral_stderr))
        se_T = float(traj.alpha_stderr[-1])
        last_step = float(abs(traj.alpha[-1] - traj.alpha[-2]))
        # alpha_T is alpha at t_{N-1} = T - dt, where the drift is evaluated with tau = dt
        rows.append(CheckRow.within("alpha at last grid time = I", traj.alpha_T, traj.fisher, m * se_T + last_step,
                                    se_T))
        rows.append(CheckRow.at_least("n kappa - 2 C_T > 0", n * traj.kappa - 2.0 * traj.curvature_term, 0.0, 0.0))
        if traj.horizon_long_enough:
            upper = traj.integrated_bound(traj.alpha_T + m * se_T)
            rows.append(CheckRow.at_most("integrated curvature bound", traj.integral, upper,
                                         m * traj.integral_stderr + abs(traj.integral_bias), traj.integral_stderr))
            bound = traj.pointwise_bound(traj.alpha_T + m * se_T)
            slack = m * traj.alpha_stderr + last_step
            excess = float(np.max(traj.alpha - bound - slack))
            rows.append(CheckRow.at_most("pointwise curvature bound (max excess)", excess, 0.0, 0.0))
        if progress_callback:
            progress_callback(100)
        return rows
