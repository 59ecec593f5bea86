"""Divergence-free sheet currents from net currents and a Fourier current potential.

Convention (REGCOIL lineage)::

    j = [(G/2π + ∂ζΦ) ∂θr - (I/2π + ∂θΦ) ∂ζr] / |∂θr × ∂ζr|

so ``j`` is a physical current per unit length (A/m), ``G`` is the net
poloidal current and ``I`` the net toroidal current, both in amperes.
The single-valued potential is

    Φ(θ, ζ) = Σ phi_cos[k,l] cos(kθ + lζ) + phi_sin[k,l] sin(kθ + lζ)

over ``0 <= k <= N``, ``-N <= l <= N`` with ``(k = 0, l <= 0)`` dropped.
The coefficient vector is ``concat(phi_cos, phi_sin)``, each block sorted
lexicographically by ``(k, l)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .geometry import SurfaceGrid

__all__ = [
    "dof_count",
    "basis_modes",
    "CurrentPotential",
    "SurfaceCurrent",
    "CurrentBasis",
    "current_from_potential",
    "current_jacobian",
    "load_potential",
    "save_potential",
]


def basis_modes(N: int):
    """(k, l) pairs of one coefficient block, in storage order."""
    if N < 0:
        raise ValueError(f"harmonic order must be non-negative, got {N}")
    modes = [(0, l) for l in range(1, N + 1)]
    modes += [(k, l) for k in range(1, N + 1) for l in range(-N, N + 1)]
    return modes


def dof_count(N: int) -> int:
    """2[(2N+1)N + N]: cosine plus sine coefficients."""
    return 2 * len(basis_modes(N))


@dataclass
class CurrentPotential:
    G: float
    I: float
    N: int
    phi_cos: np.ndarray
    phi_sin: np.ndarray

    def __post_init__(self):
        nb = len(basis_modes(self.N))
        self.phi_cos = np.asarray(self.phi_cos, dtype=float).reshape(-1)
        self.phi_sin = np.asarray(self.phi_sin, dtype=float).reshape(-1)
        if self.phi_cos.shape != (nb,) or self.phi_sin.shape != (nb,):
            raise ValueError(f"expected {nb} cos and {nb} sin coefficients for N={self.N}")
        self.G = float(self.G)
        self.I = float(self.I)

    @classmethod
    def zeros(cls, N: int, G: float = 0.0, I: float = 0.0) -> "CurrentPotential":
        nb = len(basis_modes(N))
        return cls(G, I, N, np.zeros(nb), np.zeros(nb))

    @classmethod
    def from_vector(cls, N, coefficients, G=0.0, I=0.0) -> "CurrentPotential":
        c = np.asarray(coefficients, dtype=float)
        nb = len(basis_modes(N))
        if c.shape != (2 * nb,):
            raise ValueError(f"expected {2 * nb} coefficients for N={N}, got {c.shape}")
        return cls(G, I, N, c[:nb].copy(), c[nb:].copy())

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.phi_cos, self.phi_sin])

    @property
    def n_dof(self) -> int:
        return 2 * len(self.phi_cos)

    def with_coefficients(self, coefficients) -> "CurrentPotential":
        return CurrentPotential.from_vector(self.N, coefficients, self.G, self.I)

    def evaluate(self, theta, zeta):
        """Φ and its first and second angle derivatives on a tensor grid.

        Returns ``(phi, phi_t, phi_z, phi_tt, phi_tz, phi_zz)``.
        """
        k, l = np.array(basis_modes(self.N), dtype=float).reshape(-1, 2).T
        arg = (k[None, None, :] * np.asarray(theta)[:, None, None]
               + l[None, None, :] * np.asarray(zeta)[None, :, None])
        c, s = np.cos(arg), np.sin(arg)
        f = c * self.phi_cos + s * self.phi_sin
        g = -s * self.phi_cos + c * self.phi_sin
        return (f.sum(-1), (k * g).sum(-1), (l * g).sum(-1),
                -(k * k * f).sum(-1), -(k * l * f).sum(-1), -(l * l * f).sum(-1))


@dataclass
class SurfaceCurrent:
    """Sheet current samples.

    ``grad_j[..., i, k]`` is the k-th ambient component of the tangential
    gradient of ``j_i``.
    """

    j: np.ndarray
    grad_j: np.ndarray

    def __add__(self, other):
        return SurfaceCurrent(self.j + other.j, self.grad_j + other.grad_j)

    def __mul__(self, scale):
        return SurfaceCurrent(scale * self.j, scale * self.grad_j)

    __rmul__ = __mul__

    @property
    def curl(self) -> np.ndarray:
        """Ambient curl built from tangential derivatives, ε_abc ∂_b j_c."""
        g = self.grad_j
        return np.stack([g[..., 2, 1] - g[..., 1, 2],
                         g[..., 0, 2] - g[..., 2, 0],
                         g[..., 1, 0] - g[..., 0, 1]], axis=-1)

    @property
    def divergence(self) -> np.ndarray:
        return np.trace(self.grad_j, axis1=-2, axis2=-1)

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(tuple(shape) + (3,)), np.zeros(tuple(shape) + (3, 3)))


def _sheet_fields(grid: SurfaceGrid, a, b, a_t, a_z, b_t, b_z):
    """j = (a r_θ - b r_ζ)/√g and its tangential gradient, batched over leading axes."""
    rt, rz = grid.d_theta_r, grid.d_zeta_r
    rtt, rtz, rzz = grid.second["r_tt"], grid.second["r_tz"], grid.second["r_zz"]
    sg = grid.area_element
    cross = np.cross(rz, rt)
    sg_t = np.einsum("...i,...i", cross, np.cross(rtz, rt) + np.cross(rz, rtt)) / sg
    sg_z = np.einsum("...i,...i", cross, np.cross(rzz, rt) + np.cross(rz, rtz)) / sg

    def e(x):
        return np.asarray(x)[..., None]

    j = (e(a) * rt - e(b) * rz) / e(sg)
    j_t = (e(a_t) * rt + e(a) * rtt - e(b_t) * rz - e(b) * rtz) / e(sg) - j * e(sg_t / sg)
    j_z = (e(a_z) * rt + e(a) * rtz - e(b_z) * rz - e(b) * rzz) / e(sg) - j * e(sg_z / sg)
    grad_t, grad_z = grid.contravariant_basis()
    grad = j_t[..., :, None] * grad_t[..., None, :] + j_z[..., :, None] * grad_z[..., None, :]
    return j, grad


def current_from_potential(grid: SurfaceGrid, pot: CurrentPotential) -> SurfaceCurrent:
    """Evaluate the sheet current of ``pot`` on ``grid`` analytically."""
    _, p_t, p_z, p_tt, p_tz, p_zz = pot.evaluate(grid.theta, grid.zeta)
    a = pot.G / (2 * np.pi) + p_z
    b = pot.I / (2 * np.pi) + p_t
    j, grad = _sheet_fields(grid, a, b, p_tz, p_zz, p_tt, p_tz)
    return SurfaceCurrent(j, grad)


class CurrentBasis:
    """Exact Jacobian of the sheet current with respect to potential coefficients.

    ``j(c) = G·j_G + I·j_I + Σ_k c_k b_k``; the same holds for ``grad_j``.
    """

    def __init__(self, grid: SurfaceGrid, N: int):
        self.grid = grid
        self.N = N
        modes = np.array(basis_modes(N), dtype=float).reshape(-1, 2)
        k = modes[:, 0][:, None, None]
        l = modes[:, 1][:, None, None]
        arg = k * grid.theta[None, :, None] + l * grid.zeta[None, None, :]
        c, s = np.cos(arg), np.sin(arg)
        # cos block: Φ = cos ψ ; sin block: Φ = sin ψ
        f = np.concatenate([c, s])
        g = np.concatenate([-s, c])
        kk = np.concatenate([k, k])
        ll = np.concatenate([l, l])
        p_t, p_z = kk * g, ll * g
        p_tt, p_tz, p_zz = -kk * kk * f, -kk * ll * f, -ll * ll * f
        self.j, self.grad_j = _sheet_fields(grid, p_z, p_t, p_tz, p_zz, p_tt, p_tz)
        zero = np.zeros(grid.shape)
        one = np.full(grid.shape, 1.0 / (2 * np.pi))
        self.j_G, self.grad_G = _sheet_fields(grid, one, zero, zero, zero, zero, zero)
        self.j_I, self.grad_I = _sheet_fields(grid, zero, one, zero, zero, zero, zero)

    @property
    def n_dof(self) -> int:
        return self.j.shape[0]

    def secular(self, G: float, I: float) -> SurfaceCurrent:
        return SurfaceCurrent(G * self.j_G + I * self.j_I, G * self.grad_G + I * self.grad_I)

    def linear(self, coefficients) -> SurfaceCurrent:
        c = np.asarray(coefficients, dtype=float)
        return SurfaceCurrent(np.tensordot(c, self.j, axes=1),
                              np.tensordot(c, self.grad_j, axes=1))

    def apply(self, pot: CurrentPotential) -> SurfaceCurrent:
        if pot.N != self.N:
            raise ValueError(f"basis built for N={self.N}, potential has N={pot.N}")
        return self.secular(pot.G, pot.I) + self.linear(pot.coefficients)

    @cached_property
    def curl(self) -> np.ndarray:
        return SurfaceCurrent(self.j, self.grad_j).curl

    def column(self, index: int) -> SurfaceCurrent:
        return SurfaceCurrent(self.j[index], self.grad_j[index])


def current_jacobian(grid: SurfaceGrid, pot_or_N) -> CurrentBasis:
    """The linear map coefficients -> sheet current (independent of the coefficient values)."""
    N = pot_or_N.N if isinstance(pot_or_N, CurrentPotential) else int(pot_or_N)
    return CurrentBasis(grid, N)


# ---------------------------------------------------------------------------
# potential files


def save_potential(pot: CurrentPotential, path) -> None:
    """JSON ``{G, I, N, coefficients: [{k, l, cos, sin}]}``; floats round-trip exactly."""
    coeffs = [{"k": k, "l": l, "cos": float(c), "sin": float(s)}
              for (k, l), c, s in zip(basis_modes(pot.N), pot.phi_cos, pot.phi_sin)]
    Path(path).write_text(json.dumps({"G": pot.G, "I": pot.I, "N": pot.N,
                                      "coefficients": coeffs}, indent=1))


def load_potential(path) -> CurrentPotential:
    data = json.loads(Path(path).read_text())
    N = int(data["N"])
    index = {kl: i for i, kl in enumerate(basis_modes(N))}
    pot = CurrentPotential.zeros(N, data.get("G", 0.0), data.get("I", 0.0))
    for entry in data.get("coefficients", []):
        key = (int(entry["k"]), int(entry["l"]))
        if key not in index:
            raise ValueError(f"{path}: mode {key} is not in the N={N} basis")
        pot.phi_cos[index[key]] = float(entry.get("cos", 0.0))
        pot.phi_sin[index[key]] = float(entry.get("sin", 0.0))
    return pot
