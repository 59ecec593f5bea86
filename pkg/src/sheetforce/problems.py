"""Bundled small test problem: circular-torus winding surface around a shaped plasma."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .costs import Objective, ObjectiveSpec
from .currents import CurrentPotential
from .geometry import SurfaceGrid, evaluate_grid, load_surface
from .magnetics import PlasmaBoundary

__all__ = ["Problem", "bundled_problem", "data_path", "BUNDLED_G", "BUNDLED_CASES"]

# net poloidal current putting the Case 1 peak force between c0 and c1
BUNDLED_G = 1.0e7

# the reference weights rescaled to this problem's field and force magnitudes
BUNDLED_CASES = {
    "case1": ObjectiveSpec(lambda1=1.5e-15),
    "case2": ObjectiveSpec(gamma=1e-16, force_metric="L2"),
    "case3": ObjectiveSpec(gamma=1e-14, force_metric="Ce"),
    "case4": ObjectiveSpec(lambda1=1e-19, lambda2=1e-19, gamma=1e-14, force_metric="Ce"),
}


def data_path(name: str) -> Path:
    return Path(str(resources.files("sheetforce") / "data" / name))


@dataclass
class Problem:
    coil: SurfaceGrid
    boundary: PlasmaBoundary
    N: int
    G: float
    I: float = 0.0

    def start(self) -> CurrentPotential:
        """Φ = 0 with the problem's net currents."""
        return CurrentPotential.zeros(self.N, self.G, self.I)

    def objective(self, spec: Optional[ObjectiveSpec] = None) -> Objective:
        return Objective(self.coil, self.boundary, self.N, spec or ObjectiveSpec(),
                         self.G, self.I)


def bundled_problem(n_theta: int = 32, n_zeta: int = 32, N: int = 4,
                    plasma_n_theta: Optional[int] = None, plasma_n_zeta: Optional[int] = None,
                    G: float = BUNDLED_G, I: float = 0.0) -> Problem:
    coil = evaluate_grid(load_surface(data_path("winding_torus.txt")), n_theta, n_zeta)
    plasma = evaluate_grid(load_surface(data_path("plasma_ellipse.txt")),
                           plasma_n_theta or n_theta, plasma_n_zeta or n_zeta)
    return Problem(coil, PlasmaBoundary(plasma), N, G, I)
