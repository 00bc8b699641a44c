"""Closed-form geometry of the unit sphere S^n embedded in R^{n+1}.

Points, tangent vectors and frames are stored extrinsically as ambient arrays.
Every operation accepts a leading batch shape, so a block of paths is moved
with one call; a single point is simply the case of an empty batch shape.
"""
from dataclasses import dataclass

import numpy as np

EXP_EPS = 1e-14             # |v| below this: exp and transport are the identity
DEGENERATE_GRADIENT = 1e-12  # |grad P_i| below this: theta^i falls back


def _as_float(array):
    return np.asarray(array, dtype=float)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


@dataclass(frozen=True)
class SpherePoint:
    coords: np.ndarray  # (..., n+1)

    def __post_init__(self):
        coords = _as_float(self.coords)
        if coords.ndim < 1 or coords.shape[-1] < 2:
            raise ValueError(f"a point of S^n needs n+1 >= 2 coordinates, got shape {coords.shape}")
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_vector(cls, v):
        v = _as_float(v)
        return cls(v / np.linalg.norm(v, axis=-1, keepdims=True))

    @property
    def dim(self):
        """Sphere dimension n."""
        return self.coords.shape[-1] - 1

    @property
    def batch_shape(self):
        return self.coords.shape[:-1]

    def norm_error(self):
        return np.max(np.abs(np.linalg.norm(self.coords, axis=-1) - 1.0))


@dataclass(frozen=True)
class TangentVector:
    at: SpherePoint
    vec: np.ndarray  # (..., n+1)

    def __post_init__(self):
        object.__setattr__(self, "vec", _as_float(self.vec))

    def norm(self):
        return np.linalg.norm(self.vec, axis=-1)

    def radial_error(self):
        return np.max(np.abs(_dot(self.at.coords, self.vec)))


@dataclass(frozen=True)
class SphereFrame:
    """A point of the orthonormal frame bundle: base point plus tangent basis.

    `basis[..., :, j]` is the j-th frame vector; the matrix maps R^n onto the
    tangent space at `base`.
    """

    base: SpherePoint
    basis: np.ndarray  # (..., n+1, n)

    def __post_init__(self):
        basis = _as_float(self.basis)
        d = self.base.coords.shape[-1]
        if basis.shape[-2:] != (d, d - 1):
            raise ValueError(f"frame basis must have shape (..., {d}, {d - 1}), got {basis.shape}")
        object.__setattr__(self, "basis", basis)

    @classmethod
    def at(cls, point):
        """Some orthonormal frame above `point` (QR of [x | I])."""
        x = point.coords
        d = x.shape[-1]
        stacked = np.concatenate([x[..., :, None], np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d))], axis=-1)
        q, _ = np.linalg.qr(stacked)
        basis = q[..., :, 1:]
        basis = basis - x[..., :, None] * np.einsum("...d,...dm->...m", x, basis)[..., None, :]
        return reorthonormalize(cls(point, basis))

    @property
    def dim(self):
        return self.base.dim

    def column(self, j):
        return TangentVector(self.base, self.basis[..., :, j])

    def push(self, xi):
        """R^n -> T_x S^n"""
        return TangentVector(self.base, np.einsum("...dm,...m->...d", self.basis, _as_float(xi)))

    def pull(self, v):
        """T_x S^n -> R^n (the adjoint of push)"""
        vec = v.vec if isinstance(v, TangentVector) else _as_float(v)
        return np.einsum("...dm,...d->...m", self.basis, vec)

    def gram(self):
        return np.einsum("...dm,...dk->...mk", self.basis, self.basis)

    def orthonormality_error(self):
        n = self.basis.shape[-1]
        gram_err = np.max(np.abs(self.gram() - np.eye(n)))
        radial_err = np.max(np.abs(np.einsum("...d,...dm->...m", self.base.coords, self.basis)))
        return max(gram_err, radial_err)


def project_tangent(x, v):
    """v - <x, v> x, attached at x."""
    x_c = x.coords
    v = _as_float(v)
    return TangentVector(x, v - _dot(x_c, v)[..., None] * x_c)


def coordinate_gradient(x, i):
    """Spherical gradient of the coordinate map P_i: e_i - x_i x (0-based i)."""
    x_c = x.coords
    d = x_c.shape[-1]
    if not 0 <= i < d:
        raise ValueError(f"coordinate index {i} out of range for S^{d - 1}")
    grad = -x_c[..., i, None] * x_c
    grad[..., i] += 1.0
    return TangentVector(x, grad)


def sphere_exp(x, v):
    """Geodesic exponential cos|v| x + sin|v| v/|v|, renormalized."""
    vec = v.vec if isinstance(v, TangentVector) else _as_float(v)
    return SpherePoint(_exp(x.coords, vec))


def _exp(x, v):
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    moving = r >= EXP_EPS
    direction = v / np.where(moving, r, 1.0)
    out = np.where(moving, np.cos(r) * x + np.sin(r) * direction, x)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def _transport(x, v, w):
    """Transport the columns of w (..., d, m) along the geodesic t -> exp(x, t v), t in [0, 1]."""
    r = np.linalg.norm(v, axis=-1)
    moving = r >= EXP_EPS
    r_safe = np.where(moving, r, 1.0)
    u = v / r_safe[..., None]
    along = np.einsum("...d,...dm->...m", u, w)
    delta = -np.sin(r)[..., None] * x + (np.cos(r) - 1.0)[..., None] * u
    moved = w + delta[..., :, None] * along[..., None, :]
    return np.where(moving[..., None, None], moved, w)


def parallel_transport(x, v, w):
    """Transport w from x to sphere_exp(x, v) along the geodesic with initial speed v."""
    v_vec = v.vec if isinstance(v, TangentVector) else _as_float(v)
    w_vec = w.vec if isinstance(w, TangentVector) else _as_float(w)
    end = SpherePoint(_exp(x.coords, v_vec))
    moved = _transport(x.coords, v_vec, w_vec[..., :, None])[..., :, 0]
    return TangentVector(end, moved)


def reorthonormalize(frame):
    """Modified Gram-Schmidt of the frame columns inside the tangent space of the base."""
    x = frame.base.coords
    basis = frame.basis.copy()
    for j in range(basis.shape[-1]):
        col = basis[..., :, j]
        col = col - _dot(x, col)[..., None] * x
        for k in range(j):
            q = basis[..., :, k]
            col = col - _dot(q, col)[..., None] * q
        basis[..., :, j] = col / np.linalg.norm(col, axis=-1, keepdims=True)
    return SphereFrame(frame.base, basis)


def develop_step(frame, xi):
    """One rolling step: move the base along frame(xi), transport and re-orthonormalize the frame."""
    x = frame.base.coords
    v = np.einsum("...dm,...m->...d", frame.basis, _as_float(xi))
    new_base = SpherePoint(_exp(x, v))
    moved = _transport(x, v, frame.basis)
    return reorthonormalize(SphereFrame(new_base, moved))


def frame_theta(x, fallback):
    """Unit directions theta^i = grad P_i / |grad P_i|, i = 0..n.

    Where the gradient vanishes (x = +-e_i) theta^i is `fallback`, a unit tangent
    vector at x. Returns a list of n+1 TangentVector.
    """
    fb = fallback.vec if isinstance(fallback, TangentVector) else _as_float(fallback)
    thetas = []
    for i in range(x.coords.shape[-1]):
        grad = coordinate_gradient(x, i).vec
        norm = np.linalg.norm(grad, axis=-1, keepdims=True)
        regular = norm > DEGENERATE_GRADIENT
        theta = np.where(regular, grad / np.where(regular, norm, 1.0), fb)
        thetas.append(TangentVector(x, theta))
    return thetas


def theta_energy_ratio(x, y, fallback):
    """sum_i <theta^i, y>^2 / |y|^2; bounded by 2 for tangent y."""
    y_vec = y.vec if isinstance(y, TangentVector) else _as_float(y)
    total = sum(_dot(t.vec, y_vec) ** 2 for t in frame_theta(x, fallback))
    return total / _dot(y_vec, y_vec)
