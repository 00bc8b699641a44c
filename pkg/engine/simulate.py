"""SDE integrators driven by a BrownianBatch.

Three schemes share one block-wise driver:

* controlled Euclidean diffusions, Euler-Maruyama
  X_{k+1} = X_k + sigma(X_k)(dB_k + u_k dt) + b(X_k) dt;
* horizontal motion on the frame bundle of S^n, where every step rolls the
  frame along the geodesic with initial speed Phi_k(dB_k + u_k dt);
* the one-dimensional Jacobi diffusion of a sphere coordinate, clamped to [-1, 1].

Policies are evaluated at the left end of each step and receive the simulator
state: an (B, n) array, a batched SphereFrame, or a (B,) array respectively.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from core.logger import Logger
from engine.geometry import SphereFrame, SpherePoint, develop_step
from engine.stochastics import TimeGrid

MAX_ABORT_FRACTION = 1e-3


class PathAbortError(RuntimeError):
    """Too many paths became non-finite."""


@dataclass(frozen=True)
class EuclideanModel:
    """dX = sigma(X) dB + b(X) dt. `sigma=None` means the identity, `drift=None` means zero."""

    dim: int
    sigma: Optional[Callable] = None  # (B, n) -> (B, n, n)
    drift: Optional[Callable] = None  # (B, n) -> (B, n)
    name: str = "diffusion"

    @classmethod
    def brownian(cls, dim):
        return cls(dim, name="brownian")

    @classmethod
    def ornstein_uhlenbeck(cls, dim, rate=1.0):
        return cls(dim, drift=lambda x: -rate * x, name=f"ou(rate={rate})")

    @property
    def is_brownian(self):
        return self.sigma is None and self.drift is None

    def step(self, x, noise, dt):
        if self.sigma is None:
            out = x + noise
        else:
            out = x + np.einsum("bij,bj->bi", self.sigma(x), noise)
        if self.drift is not None:
            out = out + self.drift(x) * dt
        return out


@dataclass(frozen=True)
class SpherePath:
    """Frames Phi_{t_k} and base points X_{t_k} = pi(Phi_{t_k}), k = 0..N (leading axis)."""

    grid: TimeGrid
    base: np.ndarray   # (N+1, ..., n+1)
    basis: Optional[np.ndarray] = None  # (N+1, ..., n+1, n); None when only the base was kept

    def frame(self, k):
        return SphereFrame(SpherePoint(self.base[k]), self.basis[k])

    @property
    def frames(self):
        return [self.frame(k) for k in range(self.base.shape[0])]

    @property
    def terminal(self):
        return self.frame(-1)


@dataclass(frozen=True)
class JacobiPath:
    grid: TimeGrid
    values: np.ndarray                    # (N+1, ...)
    driving: Optional[np.ndarray] = None  # (N, ...) increments dW + u dt


@dataclass
class PathBlock:
    """Raw output of one block of paths; optional fields are filled on request."""

    start: int
    grid: TimeGrid
    terminal: np.ndarray
    energy: np.ndarray
    martingale: np.ndarray  # sum_k <u_k, dB_k>
    aborted: np.ndarray
    path: Optional[object] = None        # (N+1, B, ...) array, SpherePath or JacobiPath
    rates: Optional[np.ndarray] = None   # (N, B, dim)
    increments: Optional[np.ndarray] = None
    terminal_frame: Optional[SphereFrame] = None
    clamped: Optional[np.ndarray] = None


class BatchResult(dict):
    """Per-path arrays concatenated over blocks in path order."""

    @property
    def valid(self):
        return ~self["aborted"]


def default_summary(block):
    return {
        "terminal": block.terminal,
        "energy": block.energy,
        "martingale": block.martingale,
        "aborted": block.aborted,
    }


def run_blocks(batch, block_fn, summarize=None, workers=1):
    """Apply block_fn to every block (optionally on a thread pool) and merge summaries in block order."""
    summarize = summarize or default_summary

    def task(b):
        return summarize(block_fn(b))

    if workers > 1 and batch.block_count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(task, range(batch.block_count)))
    else:
        parts = [task(b) for b in range(batch.block_count)]
    return BatchResult({key: np.concatenate([part[key] for part in parts]) for key in parts[0]})


def check_aborts(aborted, what="simulation"):
    """Raise when more than 0.1% of paths aborted, warn when some did."""
    aborted = np.asarray(aborted, dtype=bool)
    count = int(aborted.sum())
    if count == 0:
        return
    fraction = count / aborted.size
    if fraction > MAX_ABORT_FRACTION:
        raise PathAbortError(f"{what}: {count}/{aborted.size} paths became non-finite")
    Logger().warning(f"{what}: {count} non-finite paths excluded from averages")


def _freeze(new, old, aborted):
    """Keep aborted paths at their last finite state."""
    mask = aborted.reshape(aborted.shape + (1,) * (new.ndim - aborted.ndim))
    return np.where(mask, old, new)


def _nonfinite(array):
    return ~np.isfinite(array).reshape(array.shape[0], -1).all(axis=1)


def simulate_euclidean_block(model, policy, x0, batch, b, keep_path=False, keep_rates=False,
                             keep_increments=False):
    if batch.dim != model.dim:
        raise ValueError(f"batch dim {batch.dim} != model dim {model.dim}")
    grid = batch.effective_grid
    dt = grid.dt
    start, stop = batch.block_range(b)
    size = stop - start
    x = np.broadcast_to(np.asarray(x0, dtype=float), (size, model.dim)).copy()
    energy = np.zeros(size)
    martingale = np.zeros(size)
    aborted = np.zeros(size, dtype=bool)
    path = [x.copy()] if keep_path else None
    rates = [] if keep_rates else None
    increments = [] if keep_increments else None

    for k in range(grid.steps):
        db = batch.increments(b, k)
        u = policy(grid.time(k), x)
        with np.errstate(over="ignore", invalid="ignore"):
            x_new = model.step(x, db + u * dt, dt)
        bad = _nonfinite(x_new) | _nonfinite(u)
        aborted |= bad
        x = _freeze(x_new, x, aborted)
        u = np.where(aborted[:, None], 0.0, u)
        energy += 0.5 * np.sum(u * u, axis=1) * dt
        martingale += np.sum(u * db, axis=1)
        if keep_path:
            path.append(x.copy())
        if keep_rates:
            rates.append(u)
        if keep_increments:
            increments.append(db)

    return PathBlock(
        start=start, grid=grid, terminal=x, energy=energy, martingale=martingale, aborted=aborted,
        path=np.stack(path) if keep_path else None,
        rates=np.stack(rates) if keep_rates else None,
        increments=np.stack(increments) if keep_increments else None,
    )


def simulate_controlled_euclidean(model, policy, x0, batch, summarize=None, workers=1, **keep):
    """Euler-Maruyama for X^U; returns per-path terminal state, drift energy and abort flags."""
    return run_blocks(
        batch,
        lambda b: simulate_euclidean_block(model, policy, x0, batch, b, **keep),
        summarize, workers,
    )


def _broadcast_frame(frame0, size):
    d = frame0.base.coords.shape[-1]
    base = np.broadcast_to(frame0.base.coords, (size, d)).copy()
    basis = np.broadcast_to(frame0.basis, (size, d, d - 1)).copy()
    return SphereFrame(SpherePoint(base), basis)


def simulate_horizontal_block(frame0, policy, batch, b, keep_path=False, keep_rates=False,
                              keep_increments=False):
    n = frame0.dim
    if batch.dim != n:
        raise ValueError(f"batch dim {batch.dim} != sphere dimension {n}")
    grid = batch.effective_grid
    dt = grid.dt
    start, stop = batch.block_range(b)
    size = stop - start
    frame = _broadcast_frame(frame0, size)
    energy = np.zeros(size)
    martingale = np.zeros(size)
    aborted = np.zeros(size, dtype=bool)
    bases = [frame.base.coords] if keep_path else None
    # keep_path="base" stores base points only
    bases_frames = [frame.basis] if keep_path and keep_path != "base" else None
    rates = [] if keep_rates else None
    increments = [] if keep_increments else None

    for k in range(grid.steps):
        db = batch.increments(b, k)
        u = policy(grid.time(k), frame)
        with np.errstate(over="ignore", invalid="ignore"):
            moved = develop_step(frame, db + u * dt)
        bad = _nonfinite(moved.base.coords) | _nonfinite(moved.basis) | _nonfinite(u)
        aborted |= bad
        frame = SphereFrame(
            SpherePoint(_freeze(moved.base.coords, frame.base.coords, aborted)),
            _freeze(moved.basis, frame.basis, aborted),
        )
        u = np.where(aborted[:, None], 0.0, u)
        energy += 0.5 * np.sum(u * u, axis=1) * dt
        martingale += np.sum(u * db, axis=1)
        if keep_path:
            bases.append(frame.base.coords)
            if bases_frames is not None:
                bases_frames.append(frame.basis)
        if keep_rates:
            rates.append(u)
        if keep_increments:
            increments.append(db)

    return PathBlock(
        start=start, grid=grid, terminal=frame.base.coords, energy=energy, martingale=martingale,
        aborted=aborted, terminal_frame=frame,
        path=SpherePath(grid, np.stack(bases), np.stack(bases_frames) if bases_frames else None) if keep_path else None,
        rates=np.stack(rates) if keep_rates else None,
        increments=np.stack(increments) if keep_increments else None,
    )


def simulate_horizontal(frame0, policy, batch, summarize=None, workers=1, **keep):
    """Horizontal Brownian motion on O(S^n) driven by B + U; X_T is the terminal base point."""
    return run_blocks(
        batch,
        lambda b: simulate_horizontal_block(frame0, policy, batch, b, **keep),
        summarize, workers,
    )


def develop(frame0, driving, grid=None):
    """Stochastic development (rolling map) of a given driving path.

    `driving` holds per-step increments, shape (N, n) or (N, ..., n).
    """
    driving = np.asarray(driving, dtype=float)
    if not np.all(np.isfinite(driving)):
        raise ValueError("driving increments must be finite")
    steps = driving.shape[0]
    grid = grid or TimeGrid(1.0, steps)
    if grid.steps != steps:
        raise ValueError(f"grid has {grid.steps} steps, driving has {steps}")
    batch_shape = driving.shape[1:-1]
    frame = frame0
    if batch_shape:
        d = frame0.base.coords.shape[-1]
        frame = SphereFrame(SpherePoint(np.broadcast_to(frame0.base.coords, batch_shape + (d,)).copy()),
                            np.broadcast_to(frame0.basis, batch_shape + (d, d - 1)).copy())
    bases = [frame.base.coords]
    basis = [frame.basis]
    for k in range(steps):
        frame = develop_step(frame, driving[k])
        bases.append(frame.base.coords)
        basis.append(frame.basis)
    return SpherePath(grid, np.stack(bases), np.stack(basis))


def simulate_jacobi_block(n, policy, x0, batch, b, keep_path=False, keep_rates=False):
    if batch.dim != 1:
        raise ValueError("the Jacobi diffusion is driven by a one-dimensional batch")
    if abs(x0) > 1:
        raise ValueError(f"x0 must lie in [-1, 1], got {x0}")
    grid = batch.effective_grid
    dt = grid.dt
    start, stop = batch.block_range(b)
    size = stop - start
    x = np.full(size, float(x0))
    energy = np.zeros(size)
    martingale = np.zeros(size)
    clamped = np.zeros(size, dtype=np.int64)
    values = [x.copy()] if keep_path else None
    driving = [] if keep_path else None
    rates = [] if keep_rates else None

    for k in range(grid.steps):
        dw = batch.increments(b, k)[:, 0]
        u = policy(grid.time(k), x)[:, 0]
        scale = np.sqrt(np.maximum(0.0, 1.0 - x * x))
        x_new = x + scale * (dw + u * dt) - 0.5 * n * x * dt
        outside = np.abs(x_new) > 1.0
        clamped += outside
        x = np.clip(x_new, -1.0, 1.0)
        energy += 0.5 * u * u * dt
        martingale += u * dw
        if keep_path:
            values.append(x.copy())
            driving.append(dw + u * dt)
        if keep_rates:
            rates.append(u[:, None])

    return PathBlock(
        start=start, grid=grid, terminal=x, energy=energy, martingale=martingale,
        aborted=np.zeros(size, dtype=bool), clamped=clamped,
        path=JacobiPath(grid, np.stack(values), np.stack(driving)) if keep_path else None,
        rates=np.stack(rates) if keep_rates else None,
    )


def jacobi_summary(block):
    summary = default_summary(block)
    summary["clamped"] = block.clamped
    return summary


def simulate_jacobi(n, policy, x0, batch, summarize=None, workers=1, **keep):
    """dX = sqrt(1 - X^2)(dW + u dt) - (n/2) X dt, Euler step then clamp to [-1, 1]."""
    return run_blocks(
        batch,
        lambda b: simulate_jacobi_block(n, policy, x0, batch, b, **keep),
        summarize or jacobi_summary, workers,
    )


def coordinate_projection_consistency(sphere_path, i):
    """The i-th coordinate of the base path, as a JacobiPath (driving left empty)."""
    return JacobiPath(sphere_path.grid, sphere_path.base[..., i])


def moments(samples, orders=(1, 2, 3, 4)):
    """Sample moments E[X^k] and their standard errors."""
    samples = np.asarray(samples, dtype=float)
    m = samples.shape[0]
    out = []
    for k in orders:
        powers = samples ** k
        out.append((float(np.mean(powers)), float(np.std(powers, ddof=1) / np.sqrt(m))))
    return out
