"""Grids, field containers, finite-difference calculus and the equation of state.

Layout conventions used throughout the package:

* Arrays are indexed ``(x1, x3)`` in 2D and ``(x1, x2, x3)`` in 3D.  The last
  axis is always the wall-normal one; the others are periodic.
* The wall-normal axis is vertex-centred: ``n3`` cells give ``n3 + 1`` nodes,
  the first at ``x3 = -L3`` and the last at ``x3 = 0``, so both walls carry
  grid points.
* Vector fields have shape ``(dim, *grid.shape)``, deformation tensors
  ``(dim, dim, *grid.shape)`` with ``F[i, j]`` the ``i``-th entry of column
  ``j``.

Derivative operators come in two flavours.  With ``parity=None`` the wall axis
uses one-sided second-order closures (exact on quadratics).  With
``parity=+1/-1`` the field is extended across each wall by even/odd
reflection, which is what the solvers use: with those ghosts the discrete
operators are equivalent to centred differences on a doubled periodic domain.
For vector fields ``parity`` refers to the tangential components; the normal
component carries the opposite parity.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    """Pressure left the domain of the equation of state."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class HyperbolicityError(ValueError):
    """Density dropped below the floor required for hyperbolicity."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


@dataclass(frozen=True)
class Grid:
    """Periodic in x1 (and x2), wall-bounded on ``[-L3, 0]`` in x3."""

    dim: int = 2
    n1: int = 64
    n3: int = 64
    L1: float = 1.0
    L3: float = 1.0
    n2: int | None = None
    L2: float | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.dim == 3:
            if self.n2 is None or self.L2 is None:
                raise ValueError("3D grids need n2 and L2")
        counts = [self.n1, self.n3] + ([self.n2] if self.dim == 3 else [])
        if min(counts) < 8:
            raise ValueError(f"all cell counts must be >= 8, got {counts}")
        lengths = [self.L1, self.L3] + ([self.L2] if self.dim == 3 else [])
        if min(lengths) <= 0:
            raise ValueError("extents must be positive")

    @property
    def h1(self):
        return self.L1 / self.n1

    @property
    def h2(self):
        return None if self.dim == 2 else self.L2 / self.n2

    @property
    def h3(self):
        return self.L3 / self.n3

    @property
    def counts(self):
        if self.dim == 2:
            return (self.n1, self.n3)
        return (self.n1, self.n2, self.n3)

    @property
    def lengths(self):
        if self.dim == 2:
            return (self.L1, self.L3)
        return (self.L1, self.L2, self.L3)

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.lengths, self.counts))

    @property
    def shape(self):
        c = self.counts
        return tuple(c[:-1]) + (c[-1] + 1,)

    @property
    def hmin(self):
        return min(self.spacing)

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def axes(self):
        """1D coordinate arrays, one per array axis."""
        out = []
        for d, (L, n) in enumerate(zip(self.lengths, self.counts)):
            if d < self.dim - 1:
                out.append(np.arange(n) * (L / n))
            else:
                out.append(-L + np.arange(n + 1) * (L / n))
        return out

    def coords(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    @property
    def weights(self):
        """Trapezoidal quadrature weights (periodic axes are uniform)."""
        w = np.full(self.shape, float(np.prod(self.spacing)))
        w[..., 0] *= 0.5
        w[..., -1] *= 0.5
        return w

    def to_dict(self):
        return {"dim": self.dim, "n1": self.n1, "n2": self.n2, "n3": self.n3,
                "L1": self.L1, "L2": self.L2, "L3": self.L3}


def integrate(f, grid):
    return float(np.sum(f * grid.weights))


def l2_norm(f, grid):
    """Discrete L2 norm; leading axes of ``f`` are summed as components."""
    f = np.asarray(f)
    sq = f * f
    while sq.ndim > grid.dim:
        sq = sq.sum(axis=0)
    return float(np.sqrt(integrate(sq, grid)))


def _check_shape(f, grid):
    if tuple(f.shape[-grid.dim:]) != grid.shape:
        raise ShapeError(f"field shape {f.shape} does not match grid {grid.shape}")


def pad_wall(f, parity, width=1):
    """Append reflected ghost layers on both walls (last axis)."""
    pad = [(0, 0)] * (f.ndim - 1) + [(width, width)]
    g = np.pad(f, pad, mode="reflect")
    if parity < 0:
        g[..., :width] *= -1.0
        g[..., -width:] *= -1.0
    return g


def diff(f, axis, grid, parity=None):
    """Second-order first derivative of ``f`` along spatial ``axis``.

    ``f`` may carry leading component axes; ``axis`` counts spatial axes only.
    """
    f = np.asarray(f, dtype=float)
    _check_shape(f, grid)
    h = grid.spacing[axis]
    ax = f.ndim - grid.dim + axis
    if axis < grid.dim - 1:
        return (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2.0 * h)
    if parity is not None:
        g = pad_wall(f, parity)
        return (g[..., 2:] - g[..., :-2]) / (2.0 * h)
    out = np.empty_like(f)
    out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2.0 * h)
    out[..., 0] = (-3.0 * f[..., 0] + 4.0 * f[..., 1] - f[..., 2]) / (2.0 * h)
    out[..., -1] = (3.0 * f[..., -1] - 4.0 * f[..., -2] + f[..., -3]) / (2.0 * h)
    return out


def _component_parity(parity, i, dim):
    if parity is None:
        return None
    return parity if i < dim - 1 else -parity


def grad(f, grid, parity=None):
    """Gradient of a scalar; for ``parity=p`` the result has vector parity ``p``."""
    return np.stack([diff(f, d, grid, parity) for d in range(grid.dim)])


def div(X, grid, parity=None):
    X = np.asarray(X, dtype=float)
    if X.shape[0] != grid.dim:
        raise ShapeError(f"expected {grid.dim} components, got {X.shape[0]}")
    return sum(diff(X[d], d, grid, _component_parity(parity, d, grid.dim))
               for d in range(grid.dim))


def curl(X, grid, parity=None):
    """Curl; in 2D a single component ``d1 X3 - d3 X1``."""
    X = np.asarray(X, dtype=float)
    dim = grid.dim
    if X.shape[0] != dim:
        raise ShapeError(f"expected {dim} components, got {X.shape[0]}")

    def d(i, axis):
        return diff(X[i], axis, grid, _component_parity(parity, i, dim))

    if dim == 2:
        return (d(1, 0) - d(0, 1))[None]
    return np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])


def jacobian(X, grid, parity=None):
    """``J[i, k] = d_k X_i``."""
    dim = grid.dim
    return np.stack([grad(X[i], grid, _component_parity(parity, i, dim))
                     for i in range(X.shape[0])])


def laplacian(f, grid, parity=None):
    """Compact three-point Laplacian (one-sided at walls unless ``parity``)."""
    f = np.asarray(f, dtype=float)
    _check_shape(f, grid)
    out = np.zeros_like(f)
    for axis, h in enumerate(grid.spacing):
        ax = f.ndim - grid.dim + axis
        if axis < grid.dim - 1:
            out += (np.roll(f, -1, ax) - 2.0 * f + np.roll(f, 1, ax)) / h**2
        elif parity is not None:
            g = pad_wall(f, parity)
            out += (g[..., 2:] - 2.0 * f + g[..., :-2]) / h**2
        else:
            d2 = np.empty_like(f)
            d2[..., 1:-1] = (f[..., 2:] - 2.0 * f[..., 1:-1] + f[..., :-2]) / h**2
            d2[..., 0] = (2.0 * f[..., 0] - 5.0 * f[..., 1] + 4.0 * f[..., 2] - f[..., 3]) / h**2
            d2[..., -1] = (2.0 * f[..., -1] - 5.0 * f[..., -2] + 4.0 * f[..., -3]
                           - f[..., -4]) / h**2
            out += d2
    return out


def directional_derivative(Fj_total, f, grid, parity=None):
    """``(F_j + Fbar_j) . grad f`` for a full deformation column."""
    Fj_total = np.asarray(Fj_total, dtype=float)
    if Fj_total.shape[0] != grid.dim:
        raise ShapeError(f"column must have {grid.dim} components")
    g = grad(f, grid, parity)
    return np.einsum("d...,d...->...", Fj_total, g)


def derivative_multi_indices(order, dim):
    """Distinct multi-indices of a given order as tuples of axes."""
    return list(itertools.combinations_with_replacement(range(dim), order))


def sobolev_sq(f, m, grid):
    """Squared spatial H^m norm, one term per distinct multi-index."""
    f = np.asarray(f, dtype=float)
    total = l2_norm(f, grid) ** 2
    cache = {(): f}
    for order in range(1, m + 1):
        for alpha in derivative_multi_indices(order, grid.dim):
            g = diff(cache[alpha[:-1]], alpha[-1], grid)
            cache[alpha] = g
            total += l2_norm(g, grid) ** 2
    return total


@dataclass(frozen=True)
class EquationOfState:
    """Polytropic gas ``rho(p, S) = p**(1/gamma) * exp(-S/gamma)``."""

    gamma: float = 1.4
    rho_floor: float = 0.05

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        if not self.rho_floor > 0.0:
            raise ValueError("rho_floor must be positive")

    def density(self, p, S):
        return p ** (1.0 / self.gamma) * np.exp(-S / self.gamma)

    def a(self, p, S):
        return 1.0 / (self.gamma * p) + 0.0 * S

    def b(self, p, S):
        return np.full(np.broadcast(p, S).shape, -1.0 / self.gamma)

    # partial derivatives of a and b in (p, S)
    def a_p(self, p, S):
        return -1.0 / (self.gamma * p * p) + 0.0 * S

    def a_S(self, p, S):
        return np.zeros(np.broadcast(p, S).shape)

    def b_p(self, p, S):
        return np.zeros(np.broadcast(p, S).shape)

    def b_S(self, p, S):
        return np.zeros(np.broadcast(p, S).shape)

    def rho0(self, S):
        """Density at the reference pressure, ``rho(0, S)`` in scaled variables."""
        return self.density(1.0, S)


def eos_eval(eos, q, S, eps):
    """Return ``(rho, a, b)`` at pressure ``1 + eps*q``.

    Raises DomainError for non-positive pressure and HyperbolicityError when
    the density falls below ``eos.rho_floor``.
    """
    p = 1.0 + eps * np.asarray(q, dtype=float)
    bad = np.argwhere(~(p > 0.0))
    if bad.size:
        cell = tuple(int(i) for i in bad[0])
        raise DomainError(f"non-positive pressure {float(p[cell]):.6g} at cell {cell}", cell)
    rho = eos.density(p, S)
    low = np.argwhere(~(rho >= eos.rho_floor))
    if low.size:
        cell = tuple(int(i) for i in low[0])
        raise HyperbolicityError(
            f"density {float(rho[cell]):.6g} below floor {eos.rho_floor} at cell {cell}", cell)
    return rho, eos.a(p, S), eos.b(p, S)


@dataclass(frozen=True)
class BackgroundDeformation:
    """Constant deformation columns; the wall-normal row must vanish."""

    fbar: np.ndarray

    def __post_init__(self):
        fb = np.asarray(self.fbar, dtype=float)
        if fb.ndim != 2 or fb.shape[0] != fb.shape[1]:
            raise ValueError("fbar must be a square matrix")
        if np.any(fb[-1] != 0.0):
            raise ValueError("wall-normal components of the background columns must vanish")
        object.__setattr__(self, "fbar", fb)

    @classmethod
    def default(cls, dim=2):
        fb = np.zeros((dim, dim))
        fb[0, 0] = 1.0
        fb[0, -1] = 0.5
        if dim == 3:
            fb[1, 1] = 1.0
        return cls(fb)

    @classmethod
    def zero(cls, dim=2):
        return cls(np.zeros((dim, dim)))

    @property
    def dim(self):
        return self.fbar.shape[0]

    def columns(self, F):
        """Full columns ``F + Fbar`` broadcast over the grid."""
        extra = (None,) * (F.ndim - 2)
        return F + self.fbar[(slice(None), slice(None)) + extra]


def as_background(fbar, dim):
    if fbar is None:
        return BackgroundDeformation.zero(dim)
    if isinstance(fbar, BackgroundDeformation):
        return fbar
    return BackgroundDeformation(np.asarray(fbar, dtype=float))


@dataclass
class State:
    """Compressible unknowns at one instant (``p = 1 + eps*q``)."""

    q: np.ndarray
    u: np.ndarray
    F: np.ndarray
    S: np.ndarray
    eps: float
    t: float = 0.0

    @classmethod
    def zeros(cls, grid, eps, t=0.0):
        d, sh = grid.dim, grid.shape
        return cls(np.zeros(sh), np.zeros((d,) + sh), np.zeros((d, d) + sh),
                   np.zeros(sh), eps, t)

    @property
    def dim(self):
        return self.u.shape[0]

    def copy(self):
        return State(self.q.copy(), self.u.copy(), self.F.copy(), self.S.copy(),
                     self.eps, self.t)

    def pack(self):
        d = self.dim
        sh = self.q.shape
        return np.concatenate([self.q[None], self.u, self.F.reshape((d * d,) + sh),
                               self.S[None]])

    @classmethod
    def unpack(cls, arr, eps, t):
        d = _dim_from_nvar(arr.shape[0])
        sh = arr.shape[1:]
        return cls(arr[0], arr[1:1 + d], arr[1 + d:1 + d + d * d].reshape((d, d) + sh),
                   arr[-1], eps, t)

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in (self.q, self.u, self.F, self.S))


def _dim_from_nvar(nvar):
    for d in (2, 3):
        if 2 + d + d * d == nvar:
            return d
    raise ShapeError(f"cannot infer dimension from {nvar} variables")


def state_parities(dim):
    """Reflection parity of each packed variable (q, u, F, S)."""
    p = [1]
    p += [1] * (dim - 1) + [-1]
    for i in range(dim):
        p += [1 if i < dim - 1 else -1] * dim
    p += [1]
    return np.array(p)


def component_names(dim):
    idx = [1, 3] if dim == 2 else [1, 2, 3]
    names = ["q"] + [f"u{i}" for i in idx]
    names += [f"F{i}{j}" for i in idx for j in idx]
    names += ["S"]
    return names


# --- snapshot format -------------------------------------------------------

def write_component(path, array, meta):
    """Write one component as little-endian float64, x1 fastest, plus a JSON sidecar."""
    path = Path(path)
    np.asarray(array, dtype="<f8").ravel(order="F").tofile(path)
    sidecar = dict(meta)
    sidecar["shape"] = list(np.shape(array))
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def read_component(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.fromfile(path, dtype="<f8").reshape(meta["shape"], order="F")
    return data, meta


def write_snapshot(state, grid, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = grid.to_dict()
    base.update(t=float(state.t), eps=float(state.eps))
    paths = []
    for name, comp in zip(component_names(grid.dim), state.pack()):
        meta = dict(base, component=name)
        p = directory / f"{name}.bin"
        write_component(p, comp, meta)
        paths.append(p)
    return paths


def read_snapshot(directory):
    directory = Path(directory)
    meta = json.loads((directory / "q.json").read_text())
    grid = Grid(**{k: meta[k] for k in ("dim", "n1", "n2", "n3", "L1", "L2", "L3")})
    comps = [read_component(directory / f"{n}.bin")[0] for n in component_names(grid.dim)]
    return State.unpack(np.stack(comps), meta["eps"], meta["t"]), grid
