from abc import ABC, abstractmethod
import math

from core.config import ExperimentConfig
from core.logger import Logger
from engine.stochastics import BrownianBatch, TimeGrid


class Experiment(ABC):
    """Base class of every runnable experiment (see impl/)."""

    name = None        # CLI name, e.g. "borell-euclidean"
    module = None      # engine module exercised
    statement = None   # one line: what is being verified
    anchor = None      # the result the statement comes from
    defaults = {}      # config values used when the config file omits them

    def __init__(self):
        self.logger = Logger()

    def describe(self):
        return {"name": self.name, "module": self.module, "anchor": self.anchor, "statement": self.statement}

    def make_config(self, **values):
        """ExperimentConfig for this experiment, class defaults filling the gaps."""
        return ExperimentConfig.from_dict({"experiment": self.name, **values}, self.defaults).validate()

    @abstractmethod
    def run(self, config, progress_callback=None):
        """Run the experiment and return a list of core.report.CheckRow"""
        pass

    def step(self, index, total, message, progress_callback=None, start=0, stop=100):
        """Log "Step i/n" and report progress proportionally between start and stop"""
        self.logger.info(f"Step {index}/{total}: {message}")
        if progress_callback:
            progress_callback(start + int((stop - start) * (index - 1) / total))

    @staticmethod
    def grid(config, horizon=None, steps=None):
        return TimeGrid(horizon if horizon is not None else config.horizon,
                        steps if steps is not None else config.steps)

    @staticmethod
    def batch(config, dim, grid=None, paths=None, stream=0):
        """Brownian increments for one sub-run; distinct `stream` values never share randomness."""
        batch = BrownianBatch(grid or Experiment.grid(config), dim, paths or config.paths, config.seed)
        return batch.independent(stream) if stream else batch

    @staticmethod
    def band(config, *stderrs, floor=0.0):
        """Tolerance: multiplier * combined standard error + absolute floor"""
        combined = math.sqrt(sum(s * s for s in stderrs))
        return config.tolerance_multiplier * combined + floor
