"""Uniform 2D grid and the discrete calculus used by every sub-step.

Storage conventions (all plain numpy arrays, ``indexing='ij'``):

* scalar fields live at cell centres, shape ``(nx, ny)``;
* face collections hold x-face values of shape ``(nx + 1, ny)`` and y-face
  values of shape ``(nx, ny + 1)``; index 0 and -1 along the normal axis are
  boundary faces;
* vector fields (displacement, velocity) live at nodes, shape
  ``(2, nx + 1, ny + 1)``, with boundary nodes held at zero;
* symmetric tensors live at cell centres as ``(e11, e22, e12)``, shape
  ``(3, nx, ny)``.

The operator pairs are built so that discrete integration by parts is exact:
``div_faces`` is the negative adjoint of ``grad_faces`` and ``div_tensor`` is
the negative adjoint of ``sym_grad``, each under the quadrature that weights
every cell, face and node by ``hx * hy``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import fft


@dataclass(frozen=True)
class Grid:
    """Cell-centred grid on ``(0, lx) x (0, ly)``."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs at least 4 cells per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def node_shape(self) -> tuple[int, int]:
        return (self.nx + 1, self.ny + 1)

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.nx + 1) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def scalar(self, value: float = 0.0) -> np.ndarray:
        return np.full(self.shape, float(value))

    def vector(self) -> np.ndarray:
        return np.zeros((2,) + self.node_shape)

    def interior_mask(self) -> np.ndarray:
        """Boolean node mask, False on the Dirichlet boundary."""
        mask = np.zeros(self.node_shape, dtype=bool)
        mask[1:-1, 1:-1] = True
        return mask


class Faces(NamedTuple):
    x: np.ndarray  # (nx + 1, ny)
    y: np.ndarray  # (nx, ny + 1)


@dataclass(frozen=True)
class Robin:
    """Data for ``d(sigma)/dn + alpha * (sigma - value) = 0``."""

    alpha: float
    value: float = 0.0


def integrate(grid: Grid, f: np.ndarray) -> float:
    return float(np.sum(f) * grid.cell_area)


def inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> float:
    return float(np.vdot(f, g) * grid.cell_area)


def robin_effective_alpha(alpha: float, h: float) -> float:
    # ghost closure with the two-point face average gives this boundary
    # transfer coefficient
    return alpha / (1.0 + 0.5 * alpha * h)


def grad_faces(grid: Grid, f: np.ndarray, bc: Robin | None = None) -> Faces:
    """Two-point face differences; boundary faces set by the closure.

    ``bc=None`` is the homogeneous Neumann closure (zero boundary flux).  A
    :class:`Robin` closure stores the derivative along +x / +y on boundary
    faces, so the left and bottom values carry the opposite sign of the
    outward normal derivative.
    """
    gx = np.zeros((grid.nx + 1, grid.ny))
    gy = np.zeros((grid.nx, grid.ny + 1))
    gx[1:-1] = (f[1:] - f[:-1]) / grid.hx
    gy[:, 1:-1] = (f[:, 1:] - f[:, :-1]) / grid.hy
    if bc is not None and bc.alpha != 0.0:
        ax = robin_effective_alpha(bc.alpha, grid.hx)
        ay = robin_effective_alpha(bc.alpha, grid.hy)
        gx[0] = -ax * (bc.value - f[0])
        gx[-1] = ax * (bc.value - f[-1])
        gy[:, 0] = -ay * (bc.value - f[:, 0])
        gy[:, -1] = ay * (bc.value - f[:, -1])
    return Faces(gx, gy)


def div_faces(grid: Grid, g: Faces) -> np.ndarray:
    return (g.x[1:] - g.x[:-1]) / grid.hx + (g.y[:, 1:] - g.y[:, :-1]) / grid.hy


def face_pairing(grid: Grid, g: Faces, q: Faces) -> float:
    """Face quadrature of ``g . q``; every face carries weight ``hx * hy``."""
    return float((np.vdot(g.x, q.x) + np.vdot(g.y, q.y)) * grid.cell_area)


def laplacian(grid: Grid, f: np.ndarray, bc: Robin | None = None) -> np.ndarray:
    return div_faces(grid, grad_faces(grid, f, bc))


def dirichlet_energy(grid: Grid, f: np.ndarray) -> float:
    """Half the squared face-gradient norm of ``f`` under the Neumann closure."""
    g = grad_faces(grid, f)
    return 0.5 * face_pairing(grid, g, g)


def _quadrant_moduli(grid: Grid, z: np.ndarray):
    # Each cell is split into four quadrants; quadrant (s, t) pairs the
    # normal difference on x-face s with the one on y-face t, giving a full
    # 2D gradient.  At p = 2 the quadrant energies sum to the 5-point
    # Dirichlet energy exactly.
    g = grad_faces(grid, z)
    left, right = g.x[:-1] ** 2, g.x[1:] ** 2
    bottom, top = g.y[:, :-1] ** 2, g.y[:, 1:] ** 2
    return g, ((left + bottom), (left + top), (right + bottom), (right + top))


def p_energy(grid: Grid, z: np.ndarray, p: float) -> float:
    """Discrete ``(1/p) * int |grad z|^p`` whose gradient is ``-p_laplacian``."""
    _, quads = _quadrant_moduli(grid, z)
    half_p = 0.5 * p
    total = sum(np.sum(q ** half_p) for q in quads)
    return float(0.25 * total * grid.cell_area / p)


def p_laplacian(grid: Grid, z: np.ndarray, p: float) -> np.ndarray:
    """``div(|grad z|^{p-2} grad z)`` with the zero-flux closure.

    The face coefficient is the mean of ``|grad z|^{p-2}`` over the four
    quadrants that touch the face, which makes the result exactly
    ``-grad(p_energy) / cell_area``.  For ``p = 2`` every coefficient is 1.0
    and the flux is bit-identical to the one used by :func:`laplacian`.
    """
    g, (lb, lt, rb, rt) = _quadrant_moduli(grid, z)
    e = 0.5 * (p - 2.0)
    lb, lt, rb, rt = lb ** e, lt ** e, rb ** e, rt ** e
    cx = np.zeros_like(g.x)
    cx[1:-1] = 0.25 * ((rb[:-1] + rt[:-1]) + (lb[1:] + lt[1:]))
    cy = np.zeros_like(g.y)
    cy[:, 1:-1] = 0.25 * ((lt[:, :-1] + rt[:, :-1]) + (lb[:, 1:] + rb[:, 1:]))
    return div_faces(grid, Faces(cx * g.x, cy * g.y))


# ---------------------------------------------------------------- elasticity


def _dx_nodes(grid: Grid, w: np.ndarray) -> np.ndarray:
    return 0.5 * ((w[1:, :-1] - w[:-1, :-1]) + (w[1:, 1:] - w[:-1, 1:])) / grid.hx


def _dy_nodes(grid: Grid, w: np.ndarray) -> np.ndarray:
    return 0.5 * ((w[:-1, 1:] - w[:-1, :-1]) + (w[1:, 1:] - w[1:, :-1])) / grid.hy


def _dx_nodes_adjoint(grid: Grid, a: np.ndarray) -> np.ndarray:
    w = a / (2.0 * grid.hx)
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    out[1:, :-1] += w
    out[1:, 1:] += w
    out[:-1, :-1] -= w
    out[:-1, 1:] -= w
    return out


def _dy_nodes_adjoint(grid: Grid, a: np.ndarray) -> np.ndarray:
    w = a / (2.0 * grid.hy)
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    out[:-1, 1:] += w
    out[1:, 1:] += w
    out[:-1, :-1] -= w
    out[1:, :-1] -= w
    return out


def sym_grad(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Cell-centred symmetric gradient from the four surrounding nodes."""
    e11 = _dx_nodes(grid, u[0])
    e22 = _dy_nodes(grid, u[1])
    e12 = 0.5 * (_dy_nodes(grid, u[0]) + _dx_nodes(grid, u[1]))
    return np.stack([e11, e22, e12])


def div_tensor(grid: Grid, t: np.ndarray) -> np.ndarray:
    """Nodal divergence of a cell-centred symmetric tensor field.

    Defined as the negative adjoint of :func:`sym_grad` on nodes with
    homogeneous Dirichlet data; boundary nodes are returned as zero.
    """
    out = np.empty((2, grid.nx + 1, grid.ny + 1))
    out[0] = -(_dx_nodes_adjoint(grid, t[0]) + _dy_nodes_adjoint(grid, t[2]))
    out[1] = -(_dx_nodes_adjoint(grid, t[2]) + _dy_nodes_adjoint(grid, t[1]))
    zero_boundary(out)
    return out


def zero_boundary(u: np.ndarray) -> np.ndarray:
    u[:, 0, :] = 0.0
    u[:, -1, :] = 0.0
    u[:, :, 0] = 0.0
    u[:, :, -1] = 0.0
    return u


def contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise ``a : b`` for tensors stored as ``(e11, e22, e12)``."""
    return a[0] * b[0] + a[1] * b[1] + 2.0 * a[2] * b[2]


def node_inner(grid: Grid, u: np.ndarray, w: np.ndarray) -> float:
    return float(np.vdot(u, w) * grid.cell_area)


# ------------------------------------------------------------ spectral tools


def neumann_eigenvalues(grid: Grid) -> np.ndarray:
    """Eigenvalues of ``-laplacian`` (Neumann) in the DCT-II basis."""
    kx = np.arange(grid.nx)
    ky = np.arange(grid.ny)
    lx = (2.0 - 2.0 * np.cos(np.pi * kx / grid.nx)) / grid.hx**2
    ly = (2.0 - 2.0 * np.cos(np.pi * ky / grid.ny)) / grid.hy**2
    return lx[:, None] + ly[None, :]


def neumann_spectral_apply(f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Apply the Neumann-diagonalised operator with eigenvalues ``symbol``."""
    return fft.idctn(symbol * fft.dctn(f, type=2, norm="ortho"), type=2, norm="ortho")
