"""Biot-Savart field of a sheet current and the plasma-boundary field-accuracy objective."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import constants

from .currents import CurrentBasis, CurrentPotential, SurfaceCurrent
from .geometry import GeometryError, SurfaceGrid

__all__ = [
    "MU0_OVER_4PI",
    "PlasmaBoundary",
    "FieldSample",
    "biot_savart",
    "field_samples",
    "NormalFieldOperator",
    "chi_B",
    "chi_B_gradient",
    "check_separation",
]

MU0_OVER_4PI = constants.mu_0 / (4 * np.pi)

# cap on temporaries: (targets × sources × 3) floats per chunk
_CHUNK_ELEMENTS = int(os.environ.get("SHEETFORCE_CHUNK", 6_000_000))


def target_chunks(n_targets: int, n_sources: int):
    size = max(1, _CHUNK_ELEMENTS // max(3 * n_sources, 1))
    for start in range(0, n_targets, size):
        yield slice(start, min(start + size, n_targets))


@dataclass
class PlasmaBoundary:
    """Plasma surface samples plus an optional prescribed normal field (T) to cancel."""

    grid: SurfaceGrid
    b_target_normal: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.b_target_normal is None:
            self.b_target_normal = np.zeros(self.grid.shape)
        self.b_target_normal = np.broadcast_to(
            np.asarray(self.b_target_normal, dtype=float), self.grid.shape).copy()


@dataclass
class FieldSample:
    point: np.ndarray
    B: np.ndarray


def field_samples(points, B):
    return [FieldSample(np.asarray(p), np.asarray(b)) for p, b in zip(points, B)]


def biot_savart(grid: SurfaceGrid, current, points, node_tol: float = 1e-12) -> np.ndarray:
    """B(y) = μ0/4π Σ_x j(x) × (y - x)/|y - x|³ dS(x) at each point y (T).

    ``current`` is a :class:`SurfaceCurrent` or a raw ``(nθ, nζ, 3)`` array.
    Raises :class:`GeometryError` if a point sits on a source node.
    """
    j = current.j if isinstance(current, SurfaceCurrent) else np.asarray(current)
    src = grid.flat("points")
    jw = j.reshape(-1, 3) * grid.weights.reshape(-1, 1)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty_like(pts)
    scale = float(np.abs(src).max())
    for sl in target_chunks(len(pts), len(src)):
        d = pts[sl, None, :] - src[None, :, :]
        r2 = np.einsum("abi,abi->ab", d, d)
        hit = np.argwhere(r2 <= (node_tol * scale) ** 2)
        if len(hit):
            t, s = hit[0]
            i, jj = np.unravel_index(s, grid.shape)
            raise GeometryError(
                f"evaluation point {sl.start + t} coincides with source node ({i}, {jj})")
        inv3 = r2 ** -1.5
        out[sl] = np.einsum("abi,ab->ai", np.cross(jw[None, :, :], d), inv3)
    return MU0_OVER_4PI * out


def check_separation(coil: SurfaceGrid, plasma: SurfaceGrid, min_distance=None) -> float:
    """Smallest node-to-node distance between two surfaces; errors if below tolerance."""
    tol = 0.25 * coil.spacing if min_distance is None else float(min_distance)
    a, b = plasma.flat("points"), coil.flat("points")
    best = np.inf
    for sl in target_chunks(len(a), len(b)):
        d = a[sl, None, :] - b[None, :, :]
        best = min(best, float(np.sqrt(np.einsum("abi,abi->ab", d, d).min())))
    if best < tol:
        raise GeometryError(
            f"plasma boundary and winding surface nearly intersect: min distance {best:.3g} m "
            f"< tolerance {tol:.3g} m")
    return best


class NormalFieldOperator:
    """Affine map coefficients -> B·n on the plasma boundary.

    ``Bn(c) = A c + A_G G + A_I I`` with ``A[y, k]`` the normal field of
    basis current k at plasma node y.
    """

    def __init__(self, basis: CurrentBasis, boundary: PlasmaBoundary, check=True):
        coil = basis.grid
        if check:
            check_separation(coil, boundary.grid)
        self.basis = basis
        self.boundary = boundary
        tgt = boundary.grid.flat("points")
        nrm = boundary.grid.flat("normal")
        src = coil.flat("points")
        w = coil.weights.reshape(-1)
        cols = np.concatenate([basis.j.reshape(basis.n_dof, -1),
                               basis.j_G.reshape(1, -1), basis.j_I.reshape(1, -1)]).T
        rows = np.empty((len(tgt), cols.shape[1]))
        for sl in target_chunks(len(tgt), len(src)):
            d = tgt[sl, None, :] - src[None, :, :]
            r2 = np.einsum("abi,abi->ab", d, d)
            # j · (d × n_y) = n_y · (j × d)
            kern = np.cross(d, nrm[sl, None, :]) * (w * r2 ** -1.5)[..., None]
            rows[sl] = kern.reshape(kern.shape[0], -1) @ cols
        rows *= MU0_OVER_4PI
        self.A = rows[:, :-2]
        self.A_G = rows[:, -2]
        self.A_I = rows[:, -1]
        self.weights = boundary.grid.weights.reshape(-1)
        self.target = boundary.b_target_normal.reshape(-1)

    def offset(self, G, I):
        return self.A_G * G + self.A_I * I + self.target

    def residual(self, pot: CurrentPotential) -> np.ndarray:
        """B·n + b_target at every plasma node (flattened)."""
        return self.A @ pot.coefficients + self.offset(pot.G, pot.I)

    def chi2(self, pot: CurrentPotential) -> float:
        res = self.residual(pot)
        return float(np.dot(self.weights, res * res))

    def gradient(self, pot: CurrentPotential) -> np.ndarray:
        res = self.residual(pot)
        return 2.0 * self.A.T @ (self.weights * res)

    def normal_matrix(self) -> np.ndarray:
        """Hessian of χ²_B with respect to the coefficients."""
        return 2.0 * self.A.T @ (self.weights[:, None] * self.A)


def chi_B(grid: SurfaceGrid, current, boundary: PlasmaBoundary, check=True) -> float:
    """∫_{S_P} (B·n + b_target)² dS by trapezoidal quadrature (T² m²)."""
    if check:
        check_separation(grid, boundary.grid)
    B = biot_savart(grid, current, boundary.grid.flat("points"))
    bn = np.einsum("ai,ai->a", B, boundary.grid.flat("normal"))
    res = bn + boundary.b_target_normal.reshape(-1)
    return float(np.dot(boundary.grid.weights.reshape(-1), res * res))


def chi_B_gradient(grid: SurfaceGrid, pot: CurrentPotential, boundary: PlasmaBoundary,
                   basis: Optional[CurrentBasis] = None) -> np.ndarray:
    """Exact gradient of χ²_B with respect to the potential coefficients."""
    basis = basis or CurrentBasis(grid, pot.N)
    return NormalFieldOperator(basis, boundary).gradient(pot)

