"""Laplace self-force of a current sheet.

Two routes are provided:

* the closed form (four weakly singular surface integrals), evaluated on the
  grid with the self node excluded from the quadrature;
* the finite-offset semi-sum ``½ j1(y) × [B(y + εn) + B(y - εn)]``, which
  serves as an independent oracle.

Collecting the four closed-form integrals gives ``L(j1, j2)(y) = j1(y) × B̃(y)``
with the averaged field

    B̃(y) = μ0/4π ∫ [(κ(x)/r + <y-x, n(x)>/r³) (j2 × n)(x) + curl_S j2(x) / r] dx

where ``r = |y - x|`` and ``κ = div_S n``.  :func:`force_terms` keeps the
integrals separate and is used to check this identity.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .currents import CurrentBasis, CurrentPotential, SurfaceCurrent
from .geometry import GeometryError, SurfaceGrid, project_tangent
from .magnetics import MU0_OVER_4PI, biot_savart, target_chunks

__all__ = [
    "ForceField",
    "EpsilonProbe",
    "ForceOperator",
    "ForceJacobian",
    "decompose",
    "laplace_force",
    "force_terms",
    "averaged_field",
    "laplace_force_eps",
    "richardson_force",
    "force_jacobian",
    "epsilon_scan",
    "relative_l2_error",
    "loglog_slope",
]

# kernel matrices are cached when n_nodes**2 stays below this
_CACHE_PAIRS = int(os.environ.get("SHEETFORCE_CACHE_PAIRS", 4096 * 4096))


def _threads() -> int:
    return max(1, int(os.environ.get("SHEETFORCE_THREADS", "1")))


@dataclass
class ForceField:
    """Force per unit area (Pa) with its normal/tangential split."""

    total: np.ndarray
    normal_component: Optional[np.ndarray] = None
    tangential_component: Optional[np.ndarray] = None

    @property
    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.total, axis=-1)

    @property
    def max_norm(self) -> float:
        return float(self.magnitude.max())


@dataclass
class EpsilonProbe:
    epsilon: float
    force: ForceField
    field: np.ndarray = field(repr=False)
    spacing: float = float("nan")


def decompose(force, grid: SurfaceGrid) -> ForceField:
    """Fill the normal scalar ``<F, n>`` and tangential part ``π(F)``."""
    total = force.total if isinstance(force, ForceField) else np.asarray(force, dtype=float)
    normal = np.einsum("...i,...i", total, grid.normal)
    tangential = project_tangent(grid, total)
    return ForceField(total, normal, tangential)


class ForceOperator:
    """Singular-kernel quadrature of the closed-form force on one grid.

    The two pair kernels are ``s1 = 1/r`` and
    ``p = κ(x)/r + <y - x, n(x)>/r³``, both zero on the diagonal.
    """

    def __init__(self, grid: SurfaceGrid, cache: Optional[bool] = None):
        if not grid.second:
            raise GeometryError("grid lacks second-derivative (curvature) data")
        self.grid = grid
        self.points = grid.flat("points")
        self.normals = grid.flat("normal")
        self.kappa = grid.flat("mean_curvature_sum")
        self.weights = grid.weights.reshape(-1)
        n = len(self.points)
        self.chunks = list(target_chunks(n, n))
        if cache is None:
            cache = n * n <= _CACHE_PAIRS
        self._cache = [self._kernels(sl) for sl in self.chunks] if cache else None

    def _kernels(self, sl):
        d = self.points[sl, None, :] - self.points[None, :, :]
        r2 = np.einsum("abi,abi->ab", d, d)
        rows = np.arange(sl.start, sl.stop)
        r2[rows - sl.start, rows] = 1.0
        s1 = 1.0 / np.sqrt(r2)
        s3 = np.einsum("abi,bi->ab", d, self.normals) * s1 ** 3
        p = self.kappa[None, :] * s1 + s3
        s1[rows - sl.start, rows] = 0.0
        p[rows - sl.start, rows] = 0.0
        return s1, p

    def _chunk_kernels(self, index):
        if self._cache is not None:
            return self._cache[index]
        return self._kernels(self.chunks[index])

    def _map(self, func):
        n = len(self.chunks)
        if _threads() == 1 or n == 1:
            return [func(i) for i in range(n)]
        with ThreadPoolExecutor(_threads()) as pool:
            return list(pool.map(func, range(n)))

    def effective_field(self, j2: SurfaceCurrent) -> np.ndarray:
        """B̃ at every node, shape ``(n_nodes, 3)`` (T)."""
        u = j2.j.reshape(-1, 3)
        a = self.weights[:, None] * np.cross(u, self.normals)
        b = self.weights[:, None] * j2.curl.reshape(-1, 3)

        def one(i):
            s1, p = self._chunk_kernels(i)
            return p @ a + s1 @ b

        return MU0_OVER_4PI * np.concatenate(self._map(one))

    def force(self, j1: SurfaceCurrent, j2: SurfaceCurrent) -> np.ndarray:
        B = self.effective_field(j2)
        return np.cross(j1.j.reshape(-1, 3), B).reshape(self.grid.shape + (3,))

    def adjoint(self, mu: np.ndarray):
        """Transposed kernel sums ``P(x) = Σ_y p(y,x) μ(y)``, ``S(x) = Σ_y s1(y,x) μ(y)``."""
        mu = np.asarray(mu).reshape(-1, 3)

        def one(i):
            s1, p = self._chunk_kernels(i)
            sl = self.chunks[i]
            return p.T @ mu[sl], s1.T @ mu[sl]

        parts = self._map(one)
        P = np.zeros_like(mu)
        S = np.zeros_like(mu)
        for dp, ds in parts:
            P += dp
            S += ds
        return P, S


def _check_pair(grid, j1, j2):
    for j in (j1, j2):
        if j.j.shape != grid.shape + (3,):
            raise ValueError(f"current shape {j.j.shape[:2]} does not match grid {grid.shape}")


def averaged_field(grid: SurfaceGrid, j2: SurfaceCurrent, operator=None) -> np.ndarray:
    """Closed-form limit of the semi-sum field ½[B(y+εn) + B(y-εn)], grid-shaped."""
    op = operator or ForceOperator(grid)
    return op.effective_field(j2).reshape(grid.shape + (3,))


def laplace_force(grid: SurfaceGrid, j1: SurfaceCurrent, j2: SurfaceCurrent,
                  operator: Optional[ForceOperator] = None) -> ForceField:
    """Force per unit area exerted by sheet current ``j2`` on ``j1`` (Pa)."""
    _check_pair(grid, j1, j2)
    op = operator or ForceOperator(grid)
    return decompose(op.force(j1, j2), grid)


def force_terms(grid: SurfaceGrid, j1: SurfaceCurrent, j2: SurfaceCurrent):
    """The four closed-form integrals evaluated separately, each ``(nθ, nζ, 3)`` in Pa.

    1. ``-∫ [div_x(π_x j1(y)) j2(x) + (π_x j1(y)·∇_x) j2(x)] / r``
    2. ``+∫ <j1(y), n(x)> <y-x, n(x)>/r³ j2(x)``
    3. ``+∫ [<j1(y), j2(x)> div_x(π_x) + ∇_x <j1(y), j2(x)>] / r``
    4. ``-∫ <j1(y), j2(x)> <y-x, n(x)>/r³ n(x)``
    """
    _check_pair(grid, j1, j2)
    op = ForceOperator(grid, cache=False)
    v = j1.j.reshape(-1, 3)
    u = j2.j.reshape(-1, 3)
    gu = j2.grad_j.reshape(-1, 3, 3)
    nx = op.normals
    kap = op.kappa
    w = op.weights
    out = np.zeros((4, len(v), 3))
    for sl in op.chunks:
        d = op.points[sl, None, :] - op.points[None, :, :]
        r2 = np.einsum("abi,abi->ab", d, d)
        rows = np.arange(sl.start, sl.stop) - sl.start
        cols = np.arange(sl.start, sl.stop)
        r2[rows, cols] = np.inf
        s1 = w / np.sqrt(r2)
        s3 = np.einsum("abi,bi->ab", d, nx) * w * r2 ** -1.5
        vn = v[sl] @ nx.T                       # <j1(y), n(x)>
        vu = v[sl] @ u.T                        # <j1(y), j2(x)>
        # div_x(π_x v) = -κ(x) <v, n(x)> ; (π_x v · ∇_x) j2 = grad_j2(x) v
        dirder = np.einsum("bik,ak->abi", gu, v[sl])
        out[0, sl] = -(np.einsum("ab,b,ab,bi->ai", s1, -kap, vn, u)
                       + np.einsum("ab,abi->ai", s1, dirder))
        out[1, sl] = np.einsum("ab,ab,bi->ai", vn, s3, u)
        # div_x(π_x) = -κ n ; ∇_x <v, j2(x)> = grad_j2(x)^T v
        gradvu = np.einsum("bki,ak->abi", gu, v[sl])
        out[2, sl] = (np.einsum("ab,ab,b,bi->ai", s1, vu, -kap, nx)
                      + np.einsum("ab,abi->ai", s1, gradvu))
        out[3, sl] = -np.einsum("ab,ab,bi->ai", vu, s3, nx)
    return MU0_OVER_4PI * out.reshape((4,) + grid.shape + (3,))


def _offset_fields(grid: SurfaceGrid, j2: SurfaceCurrent, epsilon: float):
    y = grid.flat("points")
    n = grid.flat("normal")
    return biot_savart(grid, j2, y + epsilon * n), biot_savart(grid, j2, y - epsilon * n)


def _check_epsilon(grid, epsilon, allow_small):
    h = grid.spacing
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if epsilon < 0.25 * h * (1 - 1e-12) and not allow_small:
        raise GeometryError(f"epsilon={epsilon:.3g} m is below h/4={0.25 * h:.3g} m; "
                            "offset points would crowd the source nodes")


def laplace_force_eps(grid: SurfaceGrid, j1: SurfaceCurrent, j2: SurfaceCurrent,
                      epsilon: float, allow_small: bool = False) -> EpsilonProbe:
    """Finite-offset semi-sum ``½ j1(y) × [B(y + εn) + B(y - εn)]`` at every node.

    Requires ``epsilon >= h/4`` (h = ``grid.spacing``) unless ``allow_small``.
    """
    _check_pair(grid, j1, j2)
    _check_epsilon(grid, epsilon, allow_small)
    Bp, Bm = _offset_fields(grid, j2, epsilon)
    B = 0.5 * (Bp + Bm)
    total = np.cross(j1.j.reshape(-1, 3), B).reshape(grid.shape + (3,))
    return EpsilonProbe(float(epsilon), decompose(total, grid),
                        B.reshape(grid.shape + (3,)), grid.spacing)


def relative_l2_error(approx, reference, grid: SurfaceGrid) -> float:
    """Area-weighted ``||approx - reference|| / ||reference||`` for vector maps."""
    a = approx.total if isinstance(approx, ForceField) else np.asarray(approx)
    b = reference.total if isinstance(reference, ForceField) else np.asarray(reference)
    w = grid.weights
    num = np.sum(w * np.einsum("...i,...i", a - b, a - b))
    den = np.sum(w * np.einsum("...i,...i", b, b))
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


def epsilon_scan(grid: SurfaceGrid, j1: SurfaceCurrent, j2: SurfaceCurrent, epsilons,
                 reference: Optional[ForceField] = None):
    """Convergence table of the ε-probe against the closed form.

    One row per ε with ``mean_B`` (node mean of |B(y + εn)| and |B(y - εn)|,
    which grows like ε⁻² once ε ≪ h) and ``rel_error`` of the semi-sum force.
    A row whose offset points hit a source node is flagged and left NaN.
    """
    _check_pair(grid, j1, j2)
    reference = reference or laplace_force(grid, j1, j2)
    rows = []
    jj = j1.j.reshape(-1, 3)
    for eps in epsilons:
        eps = float(eps)
        row = {"epsilon": eps, "eps_over_h": eps / grid.spacing, "mean_B": float("nan"),
               "rel_error": float("nan"), "flag": ""}
        try:
            _check_epsilon(grid, eps, allow_small=True)
            Bp, Bm = _offset_fields(grid, j2, eps)
        except GeometryError as exc:
            row["flag"] = str(exc)
            rows.append(row)
            continue
        row["mean_B"] = float(0.5 * (np.linalg.norm(Bp, axis=1).mean()
                                     + np.linalg.norm(Bm, axis=1).mean()))
        total = np.cross(jj, 0.5 * (Bp + Bm)).reshape(grid.shape + (3,))
        row["rel_error"] = relative_l2_error(total, reference, grid)
        rows.append(row)
    return rows


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def richardson_force(grid, j1, j2, epsilon: float) -> ForceField:
    """First-order Richardson extrapolation of the ε-probe: ``2 L_ε - L_2ε``."""
    a = laplace_force_eps(grid, j1, j2, epsilon).force.total
    b = laplace_force_eps(grid, j1, j2, 2 * epsilon).force.total
    return decompose(2 * a - b, grid)


class ForceJacobian:
    """Coefficient sensitivities of the self-force ``L(j, j)`` at a fixed potential."""

    def __init__(self, grid: SurfaceGrid, pot: CurrentPotential,
                 basis: Optional[CurrentBasis] = None, operator: Optional[ForceOperator] = None):
        self.grid = grid
        self.basis = basis or CurrentBasis(grid, pot.N)
        self.operator = operator or ForceOperator(grid)
        self.current = self.basis.apply(pot)
        self.field = self.operator.effective_field(self.current)

    def force(self) -> np.ndarray:
        return np.cross(self.current.j.reshape(-1, 3), self.field).reshape(self.grid.shape + (3,))

    def column(self, index: int) -> np.ndarray:
        """∂L/∂c_k = L(b_k, j) + L(j, b_k)."""
        b = self.basis.column(index)
        dB = self.operator.effective_field(b)
        return (np.cross(b.j.reshape(-1, 3), self.field)
                + np.cross(self.current.j.reshape(-1, 3), dB)).reshape(self.grid.shape + (3,))

    def vjp(self, lam) -> np.ndarray:
        """Gradient of Σ_y <lam(y), L(y)> with respect to the coefficients."""
        lam = np.asarray(lam).reshape(-1, 3)
        op = self.operator
        first = np.cross(self.field, lam)
        mu = np.cross(lam, self.current.j.reshape(-1, 3))
        P, S = op.adjoint(mu)
        w = op.weights[:, None] * MU0_OVER_4PI
        on_j = first + w * np.cross(op.normals, P)
        on_curl = w * S
        nd = self.basis.n_dof
        return (self.basis.j.reshape(nd, -1) @ on_j.reshape(-1)
                + self.basis.curl.reshape(nd, -1) @ on_curl.reshape(-1))


def force_jacobian(grid: SurfaceGrid, pot: CurrentPotential, **kwargs) -> ForceJacobian:
    return ForceJacobian(grid, pot, **kwargs)
