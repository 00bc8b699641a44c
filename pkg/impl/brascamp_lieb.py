import numpy as np

from core.experiment import Experiment
from core.report import CheckRow
from engine.inequalities import (
    BLInstance,
    bl_finite_horizon,
    bl_lhs,
    bl_verify,
    coordinate_control_bound,
    drift_coordinate_decomposition,
    frame_lemma_ratios,
)
from engine.geometry import SphereFrame, SpherePoint
from engine.simulate import simulate_horizontal
from engine.spectral import ZonalFunction
from engine.stochastics import DriftRealization, PiecewisePolicy


class BrascampLieb(Experiment):
    name = "brascamp-lieb"
    module = "engine.inequalities"
    anchor = "Brascamp-Lieb inequality on S^n"
    statement = "int prod g_i(x_i) dsigma <= prod ||g_i||_{L^2(nu_n)} on S^n, and at every finite time"
    defaults = {
        "n": 2, "horizon": 1.0, "steps": 500, "paths": 100_000,
        "params": {"dimensions": [2, 3, 5], "instances": 100, "tilt_range": 2.0, "constant": 2.0,
                   "finite_paths": 20_000, "finite_tilts": [1.0, -0.5, 0.5]},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        m = config.tolerance_multiplier
        rows = []
        total = len(p["dimensions"]) + 2
        for j, n in enumerate(p["dimensions"], start=1):
            self.step(j, total, f"S^{n}: constants and {p['instances']} random tilts", progress_callback)
            c = float(p["constant"])
            report = bl_verify(BLInstance.constant(n, c), config.paths, config.seed, m)
            rows.append(CheckRow.within(f"n={n} constants ratio", report.ratio, 1.0, 1e-12, report.lhs_stderr))

            failures = 0
            worst = 0.0
            for k in range(p["instances"]):
                instance = BLInstance.random_tilts(n, config.seed, index=k, scale=p["tilt_range"])
                report = bl_verify(instance, config.paths, config.seed + k, m)
                failures += not report.passed
                worst = max(worst, report.ratio)
            self.logger.info(f"S^{n}: worst lhs/rhs over random tilts {worst:.4f}")
            rows.append(CheckRow.at_most(f"n={n} random tilt violations", failures, 0.0, 0.0))

            instance = BLInstance.random_tilts(n, config.seed, index=0, scale=p["tilt_range"])
            first, first_se = bl_lhs(instance, config.paths, config.seed)
            second, second_se = bl_lhs(instance, config.paths, config.seed + 1)
            rows.append(CheckRow.within(f"n={n} lhs reproducible across seeds", first, second,
                                        self.band(config, first_se, second_se), float(np.hypot(first_se, second_se))))

        self.step(total - 1, total, "a concentrated instance breaks the L^1 variant", progress_callback)
        report = bl_verify(BLInstance.concentrated(), config.paths, config.seed, m)
        rows.append(CheckRow.at_most("concentrated L^2 bound", report.lhs, report.rhs, report.slack, report.lhs_stderr))
        rows.append(CheckRow.at_least("concentrated L^1 bound violated", report.lhs, report.l1_rhs + report.slack, 0.0,
                                      report.lhs_stderr))

        self.step(total, total, "finite-horizon bound on S^2", progress_callback)
        instance = BLInstance.tilts(2, p["finite_tilts"])
        x0 = np.array([0.0, 0.6, 0.8])
        batch = self.batch(config, 2, paths=p["finite_paths"], stream=1)
        report = bl_finite_horizon(instance, x0, batch, config.workers, m)
        rows.append(CheckRow.at_most("finite-horizon bound", report.lhs, report.rhs, report.slack, report.lhs_stderr))
        if progress_callback:
            progress_callback(100)
        return rows


class FrameLemma(Experiment):
    name = "frame-lemma"
    module = "engine.inequalities"
    anchor = "frame estimate for the coordinate gradients"
    statement = "sum_i <theta^i, y>^2 <= 2 |y|^2 and the coordinate split of any control costs at most twice its energy"
    defaults = {
        "n": 2, "horizon": 1.0, "steps": 200, "paths": 1000,
        "params": {"dimensions": [2, 3, 5, 10], "samples": 100_000, "pieces": 4, "piecewise_scale": 1.0,
                   "coordinate_tilts": [0.5, 0.5, 0.5]},
    }

    def run(self, config, progress_callback=None):
        p = config.params
        m = config.tolerance_multiplier
        rows = []
        total = len(p["dimensions"]) + 2
        for j, n in enumerate(p["dimensions"], start=1):
            self.step(j, total, f"frame ratios on S^{n}", progress_callback)
            ratios = frame_lemma_ratios(n, p["samples"], config.seed + j)
            rows.append(CheckRow.at_most(f"n={n} max frame ratio", float(np.max(ratios)), 2.0, 1e-10))

        n = config.n
        x0 = np.zeros(n + 1)
        x0[0] = 1.0
        policy = PiecewisePolicy(n, config.horizon, p["pieces"], p["piecewise_scale"], config.seed)

        self.step(total - 1, total, f"coordinate split of a piecewise control on S^{n}", progress_callback)

        def summarize(block):
            drifts = drift_coordinate_decomposition(block.path, DriftRealization(block.grid, block.rates))
            return {"energy": drifts.energy, "split": drifts.total_coordinate_energy, "aborted": block.aborted}

        result = simulate_horizontal(SphereFrame.at(SpherePoint(x0)), policy, self.batch(config, n), summarize,
                                     config.workers, keep_path=True, keep_rates=True)
        valid = result.valid & (result["energy"] > 0)
        worst = float(np.max(result["split"][valid] / result["energy"][valid]))
        rows.append(CheckRow.at_most("max split/energy along paths", worst, 2.0, 1e-10))

        self.step(total, total, "per-coordinate control bound", progress_callback)
        tilts = np.broadcast_to(np.asarray(p["coordinate_tilts"], dtype=float), (n + 1,))
        profiles = [ZonalFunction.linear(float(a)) for a in tilts]
        bounds, holds = coordinate_control_bound(profiles, x0, policy, self.batch(config, n, stream=1), config.workers)
        rows.append(CheckRow.at_least("split bound on every path", float(holds), 1.0, 0.0))
        for row in bounds:
            rows.append(CheckRow.at_most(f"coordinate {row.coordinate} control bound", row.value, row.bound,
                                         m * row.stderr, row.stderr))
        if progress_callback:
            progress_callback(100)
        return rows
