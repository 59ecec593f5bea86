"""Scalar objectives and the composite cost with its analytic gradient.

    χ² = χ²_B + λ1 χ²_j + λ2 χ²_∇j + γ χ²_F

with χ²_F one of ``L2`` (∫|L|² dS), ``Lp`` ((∫|L|^p dS)^{2/p}) or ``Ce``
(∫ f_e(|L|) dS, a barrier that vanishes below c0 and diverges at c1).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .currents import CurrentBasis, CurrentPotential, SurfaceCurrent
from .force import ForceField, ForceJacobian, ForceOperator
from .geometry import SurfaceGrid
from .magnetics import NormalFieldOperator, PlasmaBoundary

__all__ = [
    "FORCE_METRICS",
    "ObjectiveSpec",
    "CostBreakdown",
    "BarrierCost",
    "chi_j",
    "chi_grad_j",
    "lp_force_cost",
    "chi_F_L2",
    "f_e",
    "f_e_derivative",
    "ce_cost",
    "Objective",
    "total_cost_and_gradient",
]

FORCE_METRICS = ("L2", "Lp", "Ce")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Penalty weights and force-metric choice.

    Units: lambda1 T²m²/A², lambda2 T²m⁴/A², gamma T²/Pa² (L2) and
    thresholds c0 < c1 in Pa.  ``eta`` (Pa) smooths |L| at zero inside
    gradient computations only.
    """

    lambda1: float = 0.0
    lambda2: float = 0.0
    gamma: float = 0.0
    force_metric: str = "L2"
    p: int = 2
    c0: float = 5e6
    c1: float = 1e7
    eta: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "gamma"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite non-negative weight, got {value}")
        if self.force_metric not in FORCE_METRICS:
            raise ValueError(f"force_metric must be one of {FORCE_METRICS}, got {self.force_metric!r}")
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"p must be an integer >= 1, got {self.p}")
        if not (0 < self.c0 < self.c1):
            raise ValueError(f"need 0 < c0 < c1, got c0={self.c0}, c1={self.c1}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


@dataclass
class CostBreakdown:
    chi2_B: float
    chi2_j: float
    chi2_gradj: float
    chi2_F: float
    total: float
    max_force: float = float("nan")
    rms_force: float = float("nan")
    max_normal_field_error: float = float("nan")
    rms_normal_field_error: float = float("nan")
    max_j: float = float("nan")
    rms_j: float = float("nan")
    ruptured: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class BarrierCost(NamedTuple):
    value: float
    ruptured: bool


def chi_j(grid: SurfaceGrid, current: SurfaceCurrent) -> float:
    """∫_S |j|² dS (A²)."""
    return float(np.sum(grid.weights * np.einsum("...i,...i", current.j, current.j)))


def chi_grad_j(grid: SurfaceGrid, current: SurfaceCurrent) -> float:
    """∫_S (|∇j_x|² + |∇j_y|² + |∇j_z|²) dS (A²)."""
    return float(np.sum(grid.weights * np.einsum("...ik,...ik", current.grad_j, current.grad_j)))


def _magnitude(force) -> np.ndarray:
    total = force.total if isinstance(force, ForceField) else np.asarray(force)
    return np.linalg.norm(total, axis=-1)


def lp_force_cost(force, grid: SurfaceGrid, p: int = 2) -> float:
    """(∫_S |L|^p dS)^{1/p} (Pa·m^{2/p})."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    m = _magnitude(force)
    return float(np.sum(grid.weights * m ** p) ** (1.0 / p))


def chi_F_L2(force, grid: SurfaceGrid) -> float:
    """∫_S |L|² dS."""
    m = _magnitude(force)
    return float(np.sum(grid.weights * m * m))


def f_e(w, c0: float, c1: float):
    """Local barrier cost ``max(w-c0,0)² / (1 - max(w-c0,0)/(c1-c0))``; ``inf`` for w >= c1."""
    w = np.asarray(w, dtype=float)
    t = np.maximum(w - c0, 0.0)
    denom = 1.0 - t / (c1 - c0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(w >= c1, np.inf, t * t / np.where(w >= c1, 1.0, denom))
    return out if out.ndim else float(out)


def f_e_derivative(w, c0: float, c1: float):
    """d f_e / d w; ``inf`` for w >= c1."""
    w = np.asarray(w, dtype=float)
    D = c1 - c0
    t = np.maximum(w - c0, 0.0)
    q = np.where(w >= c1, 0.5, 1.0 - t / D)
    out = np.where(w >= c1, np.inf, (2.0 * t * q + t * t / D) / (q * q))
    return out if out.ndim else float(out)


def ce_cost(force, grid: SurfaceGrid, c0: float, c1: float) -> BarrierCost:
    """∫_S f_e(|L|) dS with a rupture flag set when any node reaches c1."""
    m = _magnitude(force)
    if np.any(m >= c1):
        return BarrierCost(float("inf"), True)
    return BarrierCost(float(np.sum(grid.weights * f_e(m, c0, c1))), False)


class Objective:
    """Composite cost on a fixed winding surface / plasma boundary pair.

    Everything that does not depend on the coefficients (current basis,
    plasma normal-field matrix, force kernels) is built once here.
    """

    def __init__(self, grid: SurfaceGrid, boundary: PlasmaBoundary, N: int,
                 spec: ObjectiveSpec, G: float = 0.0, I: float = 0.0,
                 basis: Optional[CurrentBasis] = None,
                 field_op: Optional[NormalFieldOperator] = None,
                 force_op: Optional[ForceOperator] = None):
        self.grid = grid
        self.boundary = boundary
        self.N = N
        self.spec = spec
        self.G = float(G)
        self.I = float(I)
        self.basis = basis or CurrentBasis(grid, N)
        self.field_op = field_op or NormalFieldOperator(self.basis, boundary)
        self.force_op = force_op or ForceOperator(grid)
        self.w = grid.weights.reshape(-1)
        # restoration margin below c1, used when starting infeasible for Ce
        self.restore_margin = 0.05 * (spec.c1 - spec.c0)

    def with_spec(self, spec: ObjectiveSpec) -> "Objective":
        return Objective(self.grid, self.boundary, self.N, spec, self.G, self.I,
                         self.basis, self.field_op, self.force_op)

    @property
    def n_dof(self) -> int:
        return self.basis.n_dof

    def potential(self, coefficients) -> CurrentPotential:
        return CurrentPotential.from_vector(self.N, coefficients, self.G, self.I)

    def quadratic_diagonal(self) -> np.ndarray:
        """Diagonal of the Hessian of χ²_B + λ1 χ²_j + λ2 χ²_∇j."""
        A = self.field_op.A
        d = 2.0 * np.einsum("yk,y,yk->k", A, self.field_op.weights, A)
        bj = self.basis.j.reshape(self.n_dof, -1, 3)
        bg = self.basis.grad_j.reshape(self.n_dof, -1, 9)
        d += 2.0 * self.spec.lambda1 * np.einsum("kxi,x,kxi->k", bj, self.w, bj)
        d += 2.0 * self.spec.lambda2 * np.einsum("kxi,x,kxi->k", bg, self.w, bg)
        return d

    def quadratic_system(self):
        """Normal equations ``H c = -g0`` of χ²_B + λ1 χ²_j + λ2 χ²_∇j."""
        A, wp = self.field_op.A, self.field_op.weights
        e = self.field_op.offset(self.G, self.I)
        H = 2.0 * A.T @ (wp[:, None] * A)
        g0 = 2.0 * A.T @ (wp * e)
        sec = self.basis.secular(self.G, self.I)
        for lam, arr, s in ((self.spec.lambda1, self.basis.j, sec.j),
                            (self.spec.lambda2, self.basis.grad_j, sec.grad_j)):
            if lam:
                M = arr.reshape(self.n_dof, -1)
                wx = np.repeat(self.w, M.shape[1] // len(self.w))
                H += 2.0 * lam * (M * wx) @ M.T
                g0 += 2.0 * lam * (M * wx) @ s.reshape(-1)
        return H, g0

    def evaluate(self, coefficients, gradient: bool = True, metric: Optional[str] = None):
        """Return ``(CostBreakdown, gradient or None)`` at ``coefficients``.

        ``metric="restore"`` swaps the force objective for the feasibility
        restoration penalty ∫ max(|L| - c1 + δ, 0)² dS.
        """
        spec = self.spec
        metric = metric or spec.force_metric
        c = np.asarray(coefficients, dtype=float)
        pot = self.potential(c)
        current = self.basis.apply(pot)
        w = self.w

        res = self.field_op.residual(pot)
        chi2_B = float(np.dot(self.field_op.weights, res * res))
        jj = current.j.reshape(-1, 3)
        gj = current.grad_j.reshape(-1, 9)
        jmag = np.linalg.norm(jj, axis=1)
        chi2_j = float(np.dot(w, jmag * jmag))
        chi2_gradj = float(np.dot(w, np.einsum("xi,xi->x", gj, gj)))

        fjac = ForceJacobian(self.grid, pot, basis=self.basis, operator=self.force_op)
        force = fjac.force().reshape(-1, 3)
        m = np.linalg.norm(force, axis=1)
        ruptured = bool(np.any(m >= spec.c1))

        m_reg = np.sqrt(m * m + spec.eta ** 2)
        lam = None
        if metric == "L2":
            chi2_F = float(np.dot(w, m * m))
            lam = 2.0 * w[:, None] * force
        elif metric == "Lp":
            Q = float(np.dot(w, m ** spec.p))
            chi2_F = Q ** (2.0 / spec.p)
            Qr = float(np.dot(w, m_reg ** spec.p))
            lam = (2.0 * Qr ** (2.0 / spec.p - 1.0) * w * m_reg ** (spec.p - 2))[:, None] * force
        elif metric == "Ce":
            if ruptured:
                chi2_F = float("inf")
            else:
                chi2_F = float(np.dot(w, f_e(m, spec.c0, spec.c1)))
                lam = (w * f_e_derivative(m_reg, spec.c0, spec.c1) / m_reg)[:, None] * force
        elif metric == "restore":
            limit = spec.c1 - self.restore_margin
            t = np.maximum(m - limit, 0.0)
            chi2_F = float(np.dot(w, t * t))
            tr = np.maximum(m_reg - limit, 0.0)
            lam = (2.0 * w * tr / m_reg)[:, None] * force
        else:
            raise ValueError(f"unknown force metric {metric!r}")

        if metric == "restore":
            total = chi2_F
        else:
            total = chi2_B + spec.lambda1 * chi2_j + spec.lambda2 * chi2_gradj
            if spec.gamma:
                total = total + spec.gamma * chi2_F
        bd = CostBreakdown(
            chi2_B=chi2_B, chi2_j=chi2_j, chi2_gradj=chi2_gradj, chi2_F=chi2_F, total=total,
            max_force=float(m.max()), rms_force=float(np.sqrt(np.dot(w, m * m) / w.sum())),
            max_normal_field_error=float(np.abs(res).max()),
            rms_normal_field_error=float(np.sqrt(chi2_B / self.field_op.weights.sum())),
            max_j=float(jmag.max()), rms_j=float(np.sqrt(chi2_j / w.sum())),
            ruptured=ruptured and metric == "Ce",
        )
        if not gradient:
            return bd, None
        if not math.isfinite(total):
            return bd, None

        nd = self.n_dof
        if metric == "restore":
            return bd, fjac.vjp(lam)
        g = self.field_op.gradient(pot)
        if spec.lambda1:
            g += 2.0 * spec.lambda1 * (self.basis.j.reshape(nd, -1) @ (w[:, None] * jj).reshape(-1))
        if spec.lambda2:
            g += 2.0 * spec.lambda2 * (self.basis.grad_j.reshape(nd, -1)
                                       @ (w[:, None] * gj).reshape(-1))
        if spec.gamma:
            g += spec.gamma * fjac.vjp(lam)
        return bd, g


def total_cost_and_gradient(grid: SurfaceGrid, pot: CurrentPotential, boundary: PlasmaBoundary,
                            spec: ObjectiveSpec):
    """One-shot evaluation of the composite cost and its coefficient gradient."""
    obj = Objective(grid, boundary, pot.N, spec, pot.G, pot.I)
    return obj.evaluate(pot.coefficients)
