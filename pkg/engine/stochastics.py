"""Time grids, counter-based Brownian increments, drifts, Cameron-Martin energy, Girsanov weights."""
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

BLOCK_SIZE = 2048
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if isinstance(self.steps, bool) or int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def times(self):
        times = np.arange(self.steps + 1) * self.horizon / self.steps
        times[-1] = self.horizon
        return times

    def time(self, k):
        return k * self.horizon / self.steps

    def refine(self, factor=2):
        return TimeGrid(self.horizon, self.steps * factor)

    def coarsen(self, factor):
        if self.steps % factor:
            raise ValueError(f"cannot coarsen {self.steps} steps by {factor}")
        return TimeGrid(self.horizon, self.steps // factor)


def make_generator(seed, stream=0, counter=0):
    """Philox generator keyed by (seed, stream), starting at counter block `counter`."""
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    key = int(seed) | (int(stream) << 64)
    return np.random.Generator(np.random.Philox(key=key, counter=int(counter) << 128))


@dataclass(frozen=True)
class BrownianBatch:
    """Lazily generated Gaussian increments of `paths` independent Brownian motions in R^dim.

    Paths are grouped in blocks of BLOCK_SIZE; the increments of block b at fine
    step k come from a Philox stream keyed by (seed, b) at counter k. A path's
    increments therefore depend only on (seed, path index). With `aggregate`
    > 1 the batch is seen on a grid `aggregate` times coarser, each increment
    being the sum of the underlying fine ones (common random numbers across
    grids).
    """

    grid: TimeGrid
    dim: int
    paths: int
    seed: int
    aggregate: int = 1
    stream_offset: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.paths < 1:
            raise ValueError(f"paths must be >= 1, got {self.paths}")
        if self.grid.steps % self.aggregate:
            raise ValueError("aggregate must divide the number of fine steps")

    @classmethod
    def sample(cls, grid, dim, paths, seed):
        return cls(grid, dim, paths, seed)

    @property
    def steps(self):
        return self.grid.steps // self.aggregate

    @property
    def effective_grid(self):
        return self.grid.coarsen(self.aggregate) if self.aggregate > 1 else self.grid

    @property
    def block_count(self):
        return -(-self.paths // BLOCK_SIZE)

    def block_range(self, b):
        start = b * BLOCK_SIZE
        return start, min(start + BLOCK_SIZE, self.paths)

    def _fine(self, b, k, size):
        rng = make_generator(self.seed, self.stream_offset + b, k)
        return rng.standard_normal((size, self.dim)) * np.sqrt(self.grid.dt)

    def increments(self, b, k):
        """(block size, dim) increments of block b at step k of the effective grid."""
        start, stop = self.block_range(b)
        size = stop - start
        if self.aggregate == 1:
            return self._fine(b, k, size)
        first = k * self.aggregate
        return sum(self._fine(b, j, size) for j in range(first, first + self.aggregate))

    def block_increments(self, b):
        """(steps, block size, dim) increments of block b."""
        return np.stack([self.increments(b, k) for k in range(self.steps)])

    def path_increments(self, p):
        """(steps, dim) increments of path p alone."""
        b, offset = divmod(p, BLOCK_SIZE)
        if not 0 <= p < self.paths:
            raise IndexError(f"path {p} out of range")
        return np.stack([self.increments(b, k)[offset] for k in range(self.steps)])

    def coarsened(self, factor):
        return BrownianBatch(self.grid, self.dim, self.paths, self.seed,
                             self.aggregate * factor, self.stream_offset)

    def independent(self, index=1):
        """A batch with the same shape whose streams never overlap this one's."""
        return BrownianBatch(self.grid, self.dim, self.paths, self.seed,
                             self.aggregate, self.stream_offset + index * (1 << 40))


def sample_brownian(grid, dim, paths, seed):
    return BrownianBatch.sample(grid, dim, paths, seed)


@dataclass(frozen=True)
class DriftRealization:
    """Piecewise-constant control rates u_k on [t_k, t_{k+1}); rates has shape (steps, ..., dim)."""

    grid: TimeGrid
    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.shape[0] != self.grid.steps:
            raise ValueError(f"rates must have {self.grid.steps} steps, got {rates.shape[0]}")
        object.__setattr__(self, "rates", rates)

    @property
    def energy(self):
        return cameron_martin_energy(self)

    def path(self):
        """U_{t_k}, k = 0..N (starts at 0)."""
        steps = np.cumsum(self.rates * self.grid.dt, axis=0)
        return np.concatenate([np.zeros_like(self.rates[:1]), steps])

    def concatenate(self, other):
        if not np.isclose(self.grid.dt, other.grid.dt):
            raise ValueError("can only concatenate drifts on grids with the same dt")
        grid = TimeGrid(self.grid.horizon + other.grid.horizon, self.grid.steps + other.grid.steps)
        return DriftRealization(grid, np.concatenate([self.rates, other.rates]))


def cameron_martin_energy(drift):
    """1/2 ||U||_H^2 = 1/2 sum_k |u_k|^2 dt (rectangle rule, same as the simulators)."""
    return 0.5 * np.sum(drift.rates ** 2, axis=(0, -1)) * drift.grid.dt


def stochastic_integral(drift, increments):
    """sum_k <u_k, dB_k>"""
    return np.sum(drift.rates * increments, axis=(0, -1))


def girsanov_weight(drift, increments):
    """D_T = exp(-sum <u_k, dB_k> - 1/2 sum |u_k|^2 dt)."""
    increments = np.asarray(increments, dtype=float)
    if increments.shape[0] != drift.grid.steps:
        raise ValueError("drift and Brownian increments must share the grid")
    return np.exp(-stochastic_integral(drift, increments) - cameron_martin_energy(drift))


class DriftPolicy(ABC):
    """Feedback control u(t, state) evaluated at the left end of each step (Ito)."""

    name = "policy"

    def __init__(self, dim):
        self.dim = dim

    @abstractmethod
    def __call__(self, t, state):
        """Return (batch, dim) controls for the batched simulator state."""

    @property
    def params(self):
        return {}

    def metadata(self):
        return {"name": self.name, **self.params}

    @staticmethod
    def batch_size(state):
        coords = state if isinstance(state, np.ndarray) else getattr(state, "base", state)
        coords = getattr(coords, "coords", coords)
        coords = np.asarray(coords)
        return coords.shape[0] if coords.ndim >= 1 else 1


class ZeroPolicy(DriftPolicy):
    name = "zero"

    def __call__(self, t, state):
        return np.zeros((self.batch_size(state), self.dim))


class ConstantPolicy(DriftPolicy):
    name = "constant"

    def __init__(self, rate):
        rate = np.atleast_1d(np.asarray(rate, dtype=float))
        super().__init__(rate.shape[0])
        self.rate = rate

    @property
    def params(self):
        return {"rate": self.rate.tolist()}

    def __call__(self, t, state):
        return np.broadcast_to(self.rate, (self.batch_size(state), self.dim)).copy()


class PiecewisePolicy(DriftPolicy):
    """Random open-loop rates, constant on `pieces` equal sub-intervals of [0, T]."""

    name = "piecewise"

    def __init__(self, dim, horizon, pieces, scale, seed):
        super().__init__(dim)
        self.horizon = horizon
        self.pieces = pieces
        self.scale = scale
        self.seed = seed
        rng = make_generator(seed, stream=(1 << 62))
        self.levels = rng.uniform(-scale, scale, size=(pieces, dim))

    @property
    def params(self):
        return {"pieces": self.pieces, "scale": self.scale, "seed": self.seed}

    def __call__(self, t, state):
        piece = min(int(t / self.horizon * self.pieces), self.pieces - 1)
        return np.broadcast_to(self.levels[piece], (self.batch_size(state), self.dim)).copy()


class FeedbackPolicy(DriftPolicy):
    """Wraps a plain function fn(t, state) -> (batch, dim)."""

    def __init__(self, dim, fn, name="feedback", params=None):
        super().__init__(dim)
        self.fn = fn
        self.name = name
        self._params = dict(params or {})

    @property
    def params(self):
        return self._params

    def __call__(self, t, state):
        return np.asarray(self.fn(t, state), dtype=float).reshape(self.batch_size(state), self.dim)


def mean_and_stderr(values):
    """Monte Carlo mean and its standard error (sample std / sqrt(M))."""
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    if m == 0:
        raise ValueError("no samples to average")
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return mean, stderr
