"""B-spline bases and KAN layers with per-edge univariate functions.

Each edge (i -> j) of a `KanLayer` carries

    phi(z) = w[i, j] * SiLU(z) + sum_k c[i, k, j] * B_k(z)

with B_k the degree-`order` B-spline basis over a fixed uniform knot grid.
The basis is an autodiff primitive: the iterative Cox-de Boor recursion is
evaluated once forward, and the analytic derivative (via the degree-(p-1)
bases) backs the reverse pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "SplineGrid",
    "KanLayer",
    "EdgeId",
    "DegenerateKnotsError",
    "bspline_basis",
    "basis_values",
    "edge_eval",
    "spline_removed_eval",
    "activation_range",
]


class DegenerateKnotsError(ValueError):
    """Knot vector is not strictly increasing."""


@dataclass(frozen=True)
class SplineGrid:
    """Uniform knot grid on [t0, t_end] with `order` padding knots per side.

    `grid_size` counts the intervals between t0 and t_end; the number of
    basis functions is grid_size + order.
    """

    grid_size: int = 5
    order: int = 3
    t0: float = -1.0
    t_end: float = 1.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.grid_size < 1 or self.order < 1:
            raise ValueError("grid_size and order must be >= 1")
        if not self.t_end > self.t0:
            raise DegenerateKnotsError(f"empty grid interval [{self.t0}, {self.t_end}]")
        h = (self.t_end - self.t0) / self.grid_size
        knots = self.t0 + h * np.arange(-self.order, self.grid_size + self.order + 1, dtype=np.float64)
        if np.any(np.diff(knots) <= 1e-12):
            raise DegenerateKnotsError("knots are not strictly increasing")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def n_bases(self) -> int:
        return self.grid_size + self.order


def _cox_de_boor(z: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    """All degree-`degree` basis values at `z`; output shape z.shape + (m-degree-1,).

    Degree-0 seeds are half-open indicators [t_i, t_{i+1}); for degree >= 1
    the recursion is continuous, so values at interior knots (including t_end,
    which falls in the first padding interval) are the correct limits.
    """
    zc = z[..., None]
    b = ((zc >= knots[:-1]) & (zc < knots[1:])).astype(np.float64)
    for k in range(1, degree + 1):
        left = (zc - knots[: -(k + 1)]) / (knots[k:-1] - knots[: -(k + 1)])
        right = (knots[k + 1 :] - zc) / (knots[k + 1 :] - knots[1:-k])
        b = left * b[..., :-1] + right * b[..., 1:]
    return b


def basis_values(z, grid: SplineGrid) -> np.ndarray:
    """Plain-numpy basis matrix, shape z.shape + (n_bases,)."""
    z = np.asarray(z, dtype=np.float64)
    return _cox_de_boor(z, grid.knots, grid.order)


def _basis_with_lower(z: np.ndarray, grid: SplineGrid):
    """Degree-p bases plus the degree-(p-1) bases needed for the derivative."""
    lower = _cox_de_boor(z, grid.knots, grid.order - 1)
    knots, p = grid.knots, grid.order
    zc = z[..., None]
    left = (zc - knots[: -(p + 1)]) / (knots[p:-1] - knots[: -(p + 1)])
    right = (knots[p + 1 :] - zc) / (knots[p + 1 :] - knots[1:-p])
    full = left * lower[..., :-1] + right * lower[..., 1:]
    return full, lower


def _basis_derivative(lower: np.ndarray, grid: SplineGrid) -> np.ndarray:
    knots, p = grid.knots, grid.order
    d_left = p / (knots[p:-1] - knots[: -(p + 1)])
    d_right = p / (knots[p + 1 :] - knots[1:-p])
    return d_left * lower[..., :-1] - d_right * lower[..., 1:]


def bspline_basis(z, grid: SplineGrid) -> Tensor:
    """Differentiable basis evaluation; result shape z.shape + (n_bases,)."""
    zt = ad.as_tensor(z)
    full, lower = _basis_with_lower(zt.values, grid)

    def vjp(g):
        return (np.sum(g * _basis_derivative(lower, grid), axis=-1),)

    return ad.custom_op("bspline_basis", full, (zt,), vjp)


@dataclass(frozen=True)
class EdgeId:
    """One first-layer KAN edge: branch ('trend'/'resid'), layer, input i, output j."""

    branch: str
    layer_index: int
    input_index: int
    output_index: int

    def label(self) -> str:
        return f"{self.branch}:{self.layer_index}:{self.input_index}->{self.output_index}"


class KanLayer:
    """Edge-function layer: out[j] = sum_i phi_{i->j}(z_i).

    Parameters: `base_w` [in, out] for the SiLU term, `spline_c`
    [in, n_bases, out] for the B-spline expansion. Spline coefficients start
    small (std 0.1 / sqrt(n_bases)) so early training stays near the SiLU
    baseline; base weights use the usual +/- 1/sqrt(in) fan-in init.
    """

    def __init__(self, in_dim: int, out_dim: int, grid: SplineGrid, rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.grid = grid
        bound = 1.0 / np.sqrt(in_dim)
        self.base_w = rng.uniform(-bound, bound, size=(in_dim, out_dim))
        self.spline_c = rng.normal(
            0.0, 0.1 / np.sqrt(grid.n_bases), size=(in_dim, grid.n_bases, out_dim)
        )

    @property
    def n_edges(self) -> int:
        return self.in_dim * self.out_dim

    def forward(self, z: Tensor, w: Tensor, c: Tensor) -> Tensor:
        """Batched forward for z [rows, in_dim] with bound parameter tensors."""
        rows = z.shape[0]
        base = ad.matmul(ad.silu(z), w)
        bas = bspline_basis(z, self.grid)
        spline = ad.matmul(
            bas.reshape((rows, self.in_dim * self.grid.n_bases)),
            c.reshape((self.in_dim * self.grid.n_bases, self.out_dim)),
        )
        return base + spline

    def __call__(self, z: np.ndarray) -> np.ndarray:
        out = self.forward(Tensor(z), Tensor(self.base_w), Tensor(self.spline_c))
        return out.values

    # per-edge views ---------------------------------------------------------

    def edge_eval(self, i: int, j: int, z) -> np.ndarray | float:
        """phi_{i->j}(z) for scalar or array z."""
        z = np.asarray(z, dtype=np.float64)
        out = self.base_w[i, j] * (z * _sigmoid(z)) + basis_values(z, self.grid) @ self.spline_c[i, :, j]
        return float(out) if out.ndim == 0 else out

    def spline_removed_eval(self, i: int, j: int, z) -> np.ndarray | float:
        z = np.asarray(z, dtype=np.float64)
        out = self.base_w[i, j] * (z * _sigmoid(z))
        return float(out) if out.ndim == 0 else out

    def edge_activations(self, z_rows: np.ndarray) -> np.ndarray:
        """phi values for all edges at once: [rows, in, out]."""
        silu = z_rows * _sigmoid(z_rows)
        bas = basis_values(z_rows, self.grid)
        return silu[:, :, None] * self.base_w[None, :, :] + np.einsum(
            "rik,iko->rio", bas, self.spline_c, optimize=True
        )

    def activation_range_all(self, resolution: int = 256) -> np.ndarray:
        """max - min of phi over a dense scan of [t0, t_end] for every edge: [in, out]."""
        zs = np.linspace(self.grid.t0, self.grid.t_end, resolution)
        silu = zs * _sigmoid(zs)
        bas = basis_values(zs, self.grid)
        phi = silu[:, None, None] * self.base_w[None, :, :] + np.einsum(
            "rk,iko->rio", bas, self.spline_c, optimize=True
        )
        return np.max(phi, axis=0) - np.min(phi, axis=0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def edge_eval(edge: EdgeId, z, layer: KanLayer):
    return layer.edge_eval(edge.input_index, edge.output_index, z)


def spline_removed_eval(edge: EdgeId, z, layer: KanLayer):
    return layer.spline_removed_eval(edge.input_index, edge.output_index, z)


def activation_range(edge: EdgeId, layer: KanLayer, resolution: int = 256) -> float:
    """Scan phi over the grid interval; order-free and >= 0 by construction."""
    zs = np.linspace(layer.grid.t0, layer.grid.t_end, resolution)
    vals = layer.edge_eval(edge.input_index, edge.output_index, zs)
    return float(np.max(vals) - np.min(vals))
