"""Nonlinear conjugate-gradient minimisation of the composite coil cost."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .costs import CostBreakdown, Objective, ObjectiveSpec
from .currents import CurrentPotential, dof_count
from .geometry import SurfaceGrid
from .magnetics import PlasmaBoundary

__all__ = [
    "OptimizerConfig",
    "RunRecord",
    "minimize",
    "weight_scan",
    "reference_cases",
    "REFERENCE_CASES",
    "tradeoff_row",
]

log = logging.getLogger(__name__)

# weight table for the four reference runs; c0 = 5 MPa, c1 = 10 MPa
REFERENCE_CASES = {
    "case1": ObjectiveSpec(lambda1=1.5e-16),
    "case2": ObjectiveSpec(gamma=1e-17, force_metric="L2"),
    "case3": ObjectiveSpec(gamma=1e-16, force_metric="Ce"),
    "case4": ObjectiveSpec(lambda1=1e-19, lambda2=1e-19, gamma=1e-16, force_metric="Ce"),
}


@dataclass
class OptimizerConfig:
    """Polak-Ribière+ CG with Armijo backtracking.

    ``restart_period=None`` means ``max(n_dof // 4, 50)``.
    """

    max_iters: int = 500
    grad_tol: float = 1e-8
    c_armijo: float = 1e-4
    shrink: float = 0.5
    max_line_search: int = 40
    restart_period: Optional[int] = None
    precondition: bool = True
    restore_iters: int = 200

    def __post_init__(self):
        if self.grad_tol <= 0 or self.c_armijo <= 0 or self.max_iters < 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError(f"shrink must lie in (0, 1), got {self.shrink}")
        if not 0 < self.c_armijo < 0.5:
            raise ValueError(f"c_armijo must lie in (0, 0.5), got {self.c_armijo}")


@dataclass
class RunRecord:
    history: List[dict]
    coefficients: np.ndarray
    potential: CurrentPotential
    wall_time: float
    config: dict
    termination: str
    iterations: int
    evaluations: int
    label: str = ""
    phases: dict = field(default_factory=dict)

    @property
    def final(self) -> dict:
        return self.history[-1]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "termination": self.termination,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "wall_time": self.wall_time,
            "config": self.config,
            "coefficients": [float(x) for x in self.coefficients],
            "G": self.potential.G,
            "I": self.potential.I,
            "N": self.potential.N,
            "history": self.history,
        }


def _record(bd: CostBreakdown, it: int, step: float, phase: str, accepted: str) -> dict:
    row = bd.to_dict()
    row.update(iteration=it, step=step, phase=phase, accept=accepted)
    return row


class _Stop(Exception):
    pass


def _cg(fun, x0, config: OptimizerConfig, scale, history, phase, stop_value=None, g_ref=0.0):
    """Minimise ``fun(x) -> (CostBreakdown, grad)`` in scaled variables ``x = scale * z``.

    The stopping test is ``|g| <= grad_tol * max(|g(x0)|, g_ref)`` in scaled
    variables.  Returns ``(x, breakdown, termination, iterations, evaluations)``.
    """
    counter = {"evals": 0}

    def f_and_g(z):
        counter["evals"] += 1
        bd, g = fun(scale * z)
        return bd, (None if g is None else scale * g)

    z = x0 / scale
    bd, g = f_and_g(z)
    f = bd.total
    history.append(_record(bd, 0, 0.0, phase, "start"))
    if not math.isfinite(f) or g is None:
        return scale * z, bd, "infeasible_start", 0, counter["evals"]
    gnorm0 = max(float(np.linalg.norm(g)), g_ref, np.finfo(float).tiny)
    n = len(z)
    period = config.restart_period or max(n // 4, 50)
    d = -g
    alpha_prev, gd_prev = None, None
    termination = "max_iters"
    it = 0
    for it in range(1, config.max_iters + 1):
        if stop_value is not None and f <= stop_value:
            termination = "target_reached"
            it -= 1
            break
        if np.linalg.norm(g) <= config.grad_tol * gnorm0:
            termination = "grad_tol"
            it -= 1
            break
        gd = float(g @ d)
        if gd >= 0:
            d = -g
            gd = float(g @ d)
        # initial trial step
        if alpha_prev is None:
            alpha = 1.0 / max(float(np.linalg.norm(d)), np.finfo(float).tiny)
            alpha = min(alpha, 1.0) if math.isfinite(alpha) else 1.0
        else:
            alpha = alpha_prev * gd_prev / gd
        accepted = None
        for _ in range(config.max_line_search):
            bd1, g1 = f_and_g(z + alpha * d)
            f1 = bd1.total
            if math.isfinite(f1) and g1 is not None:
                gd1 = float(g1 @ d)
                armijo = f1 <= f + config.c_armijo * alpha * gd
                # approximate Armijo (derivative form) guards against round-off in f
                approx = (not armijo and f1 <= f + 1e-12 * abs(f)
                          and gd1 <= (2 * config.c_armijo - 1) * gd)
                if armijo or approx:
                    accepted = (alpha, bd1, g1, "armijo" if armijo else "approx")
                    # secant refinement along d (exact for quadratics)
                    if gd1 > gd:
                        alpha_s = alpha * gd / (gd - gd1)
                        if abs(alpha_s - alpha) > 1e-6 * alpha:
                            bd2, g2 = f_and_g(z + alpha_s * d)
                            f2 = bd2.total
                            if g2 is not None and math.isfinite(f2):
                                gd2 = float(g2 @ d)
                                ok = f2 <= f + config.c_armijo * alpha_s * gd
                                ok_approx = (f2 <= f + 1e-12 * abs(f)
                                             and gd2 <= (2 * config.c_armijo - 1) * gd)
                                better = f2 < f1 or (f2 <= f1 + 1e-12 * abs(f1)
                                                     and abs(gd2) < abs(gd1))
                                if (ok or ok_approx) and better:
                                    accepted = (alpha_s, bd2, g2, "armijo" if ok else "approx")
                    break
                # backtrack with a safeguarded quadratic interpolation
                denom = 2.0 * (f1 - f - alpha * gd)
                trial = -gd * alpha * alpha / denom if denom > 0 else config.shrink * alpha
                alpha = float(np.clip(trial, 0.1 * alpha, config.shrink * alpha))
            else:
                alpha *= config.shrink
        if accepted is None:
            termination = "line_search_failure"
            it -= 1
            break
        alpha, bd_new, g_new, how = accepted
        z = z + alpha * d
        y = g_new - g
        beta = max(0.0, float(g_new @ y) / float(g @ g))
        if it % period == 0:
            beta = 0.0
        alpha_prev, gd_prev = alpha, float(g @ d)
        d = -g_new + beta * d
        g, bd, f = g_new, bd_new, bd_new.total
        history.append(_record(bd, it, alpha, phase, how))
    return scale * z, bd, termination, it, counter["evals"]


def minimize(grid: SurfaceGrid, boundary: PlasmaBoundary, pot0: CurrentPotential,
             spec: ObjectiveSpec, config: Optional[OptimizerConfig] = None,
             objective: Optional[Objective] = None, label: str = "") -> RunRecord:
    """Minimise χ² over the potential coefficients, keeping G and I fixed.

    With the ``Ce`` metric and a start above the rupture threshold, a
    restoration phase first drives every |L| below ``c1 - 0.05 (c1 - c0)``.
    """
    config = config or OptimizerConfig()
    t0 = time.perf_counter()
    if objective is not None and objective.N == pot0.N:
        # reuse the precomputed operators; G and I come from the start point
        obj = Objective(grid, boundary, pot0.N, spec, pot0.G, pot0.I, objective.basis,
                        objective.field_op, objective.force_op)
    else:
        obj = Objective(grid, boundary, pot0.N, spec, pot0.G, pot0.I)
    if config.precondition:
        diag = obj.quadratic_diagonal()
        pos = diag[diag > 0]
        floor = (pos.max() if len(pos) else 1.0) * 1e-14
        scale = 1.0 / np.sqrt(np.maximum(diag, floor))
    else:
        scale = np.ones(obj.n_dof)

    history: list = []
    x = pot0.coefficients.copy()
    evals = iters = 0
    phases = {}
    termination = None
    if spec.force_metric == "Ce":
        bd, _ = obj.evaluate(x, gradient=False)
        if bd.ruptured:
            log.info("start violates the rupture threshold; running restoration")
            x, bd, term, k, e = _cg(lambda c: obj.evaluate(c, metric="restore"), x,
                                    replace(config, max_iters=config.restore_iters),
                                    scale, history, "restore", stop_value=0.0)
            evals += e
            iters += k
            phases["restore"] = term
            if obj.evaluate(x, gradient=False)[0].ruptured:
                termination = "restoration_failed"
    if termination is None:
        # gradient scale at the secular-only start, so a run begun at the optimum stops at once
        g_zero = obj.evaluate(np.zeros(obj.n_dof))[1]
        g_ref = 0.0 if g_zero is None else float(np.linalg.norm(scale * g_zero))
        evals += 1
        x, bd, termination, k, e = _cg(obj.evaluate, x, config, scale, history, "main",
                                       g_ref=g_ref)
        evals += e
        iters += k
        phases["main"] = termination
    return RunRecord(
        history=history, coefficients=x, potential=obj.potential(x),
        wall_time=time.perf_counter() - t0,
        config={"optimizer": asdict(config), "objective": asdict(spec),
                "N": pot0.N, "G": pot0.G, "I": pot0.I, "n_dof": dof_count(pot0.N)},
        termination=termination, iterations=iters, evaluations=evals, label=label, phases=phases,
    )


def tradeoff_row(record: RunRecord, weight_name: str = "", weight: float = float("nan")) -> dict:
    """(χ²_B, χ²_j, χ²_F, max|L|, max|B·n|) of a finished run, for trade-off plots."""
    f = record.final
    return {
        "weight_name": weight_name, "weight": weight,
        "chi2_B": f["chi2_B"], "chi2_j": f["chi2_j"], "chi2_gradj": f["chi2_gradj"],
        "chi2_F": f["chi2_F"], "max_force": f["max_force"], "rms_force": f["rms_force"],
        "max_normal_field_error": f["max_normal_field_error"],
        "termination": record.termination,
    }


def weight_scan(grid: SurfaceGrid, boundary: PlasmaBoundary, spec_template: ObjectiveSpec,
                weight_name: str, values: Sequence[float], pot0: CurrentPotential,
                config: Optional[OptimizerConfig] = None, warm_start: bool = True,
                objective: Optional[Objective] = None):
    """Run :func:`minimize` once per value of one weight.

    Returns ``(records, rows)``.  Runs are ordered as given; with
    ``warm_start`` each run starts from the previous solution.  A failed run
    is recorded with its error and the scan continues.
    """
    if not len(values):
        raise ValueError("scan needs at least one weight value")
    if weight_name not in ("lambda1", "lambda2", "gamma"):
        raise ValueError(f"cannot scan {weight_name!r}")
    obj = objective or Objective(grid, boundary, pot0.N, spec_template, pot0.G, pot0.I)
    records, rows = [], []
    start = pot0
    for value in values:
        spec = replace(spec_template, **{weight_name: float(value)})
        try:
            rec = minimize(grid, boundary, start, spec, config, objective=obj,
                           label=f"{weight_name}={value:g}")
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("scan point %s=%g failed: %s", weight_name, value, exc)
            records.append(None)
            rows.append({"weight_name": weight_name, "weight": float(value),
                         "termination": f"error: {exc}"})
            continue
        records.append(rec)
        rows.append(tradeoff_row(rec, weight_name, float(value)))
        if warm_start:
            start = rec.potential
    return records, rows


def reference_cases(grid: SurfaceGrid, boundary: PlasmaBoundary, pot0: CurrentPotential,
                config: Optional[OptimizerConfig] = None, cases=None,
                objective: Optional[Objective] = None):
    """Run the four reference weight settings; returns ``{name: RunRecord}``."""
    cases = cases or REFERENCE_CASES
    obj = objective or Objective(grid, boundary, pot0.N, next(iter(cases.values())),
                                 pot0.G, pot0.I)
    return {name: minimize(grid, boundary, pot0, spec, config, objective=obj, label=name)
            for name, spec in cases.items()}
