"""Exception hierarchy shared by every spacslab module.

Each error carries the numbers that triggered it so the CLI can report them in
its structured JSON error document.
"""
from __future__ import annotations

from typing import Any, Dict, Optional


class SpacslabError(Exception):
    """Base class for domain failures."""

    def details(self) -> Dict[str, Any]:
        return {}


class TruncationTooSmall(SpacslabError):
    def __init__(self, tail_mass: float, dim: int, tolerance: float):
        self.tail_mass = float(tail_mass)
        self.dim = int(dim)
        self.tolerance = float(tolerance)
        super().__init__(
            f"Fock truncation dim={dim} leaves tail mass {tail_mass:.3e} above tolerance {tolerance:.1e}"
        )

    def details(self) -> Dict[str, Any]:
        return {"tail_mass": self.tail_mass, "dim": self.dim, "tolerance": self.tolerance}


class IndexOutOfRange(SpacslabError):
    def __init__(self, index: int, dim: int):
        self.index = int(index)
        self.dim = int(dim)
        super().__init__(f"Fock index {index} outside basis of dimension {dim}")

    def details(self) -> Dict[str, Any]:
        return {"index": self.index, "dim": self.dim}


class MassOutsideGrid(SpacslabError):
    def __init__(self, leaked_mass: float, tolerance: float):
        self.leaked_mass = float(leaked_mass)
        self.tolerance = float(tolerance)
        super().__init__(
            f"Wigner grid edges carry an estimated {leaked_mass:.3e} of mass (tolerance {tolerance:.1e})"
        )

    def details(self) -> Dict[str, Any]:
        return {"leaked_mass": self.leaked_mass, "tolerance": self.tolerance}


class InsufficientHeadroom(SpacslabError):
    def __init__(self, top_population: float, headroom: int, dim: int):
        self.top_population = float(top_population)
        self.headroom = int(headroom)
        self.dim = int(dim)
        where = f"in the top {headroom} of {dim} levels" if headroom else f"above the {dim}-level basis"
        super().__init__(f"Population {top_population:.3e} lies {where}; extend the basis before applying loss")

    def details(self) -> Dict[str, Any]:
        return {"top_population": self.top_population, "headroom": self.headroom, "dim": self.dim}


class ProbabilityOutOfRange(SpacslabError):
    def __init__(self, probability: float):
        self.probability = float(probability)
        super().__init__(f"Per-frame herald probability {probability:.4g} is not in [0, 1]")

    def details(self) -> Dict[str, Any]:
        return {"probability": self.probability}


class RatioBelowUnity(SpacslabError):
    def __init__(self, ratio: float):
        self.ratio = float(ratio)
        super().__init__(
            f"Seeded/unseeded herald rate ratio {ratio:.4g} is below 1; check the rate calibration"
        )

    def details(self) -> Dict[str, Any]:
        return {"ratio": self.ratio}


class DensityNegativeBeyondTolerance(SpacslabError):
    def __init__(self, min_density: float, theta: float):
        self.min_density = float(min_density)
        self.theta = float(theta)
        super().__init__(
            f"Quadrature density reaches {min_density:.3e} at theta={theta:.4f}; the state is not physical"
        )

    def details(self) -> Dict[str, Any]:
        return {"min_density": self.min_density, "theta": self.theta}


class DegenerateFit(SpacslabError):
    pass


class GridTooCoarse(SpacslabError):
    def __init__(self, worst_error: float, state: str, element: tuple):
        self.worst_error = float(worst_error)
        self.state = state
        self.element = tuple(int(i) for i in element)
        super().__init__(
            f"Pattern-function table failed validation on {state}: element {self.element} "
            f"off by {worst_error:.3e}"
        )

    def details(self) -> Dict[str, Any]:
        return {"worst_error": self.worst_error, "state": self.state, "element": list(self.element)}


class InsufficientPhaseCoverage(SpacslabError):
    pass


class TheoryNotPSD(SpacslabError):
    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(f"Theory density matrix has eigenvalue {min_eigenvalue:.3e} < 0")

    def details(self) -> Dict[str, Any]:
        return {"min_eigenvalue": self.min_eigenvalue}


class ConfigError(SpacslabError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")

    def details(self) -> Dict[str, Any]:
        return {"field": self.field}


class MissingInput(SpacslabError):
    def __init__(self, path: str, stage: Optional[str] = None):
        self.path = str(path)
        self.stage = stage
        hint = f" (run `spacslab {stage}` first)" if stage else ""
        super().__init__(f"Expected input not found: {path}{hint}")

    def details(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"path": self.path}
        if self.stage:
            out["produced_by"] = self.stage
        return out


class FirstOrderValidityWarning(UserWarning):
    """Herald probability high enough that double-pair terms stop being negligible."""


class PhaseAliasingWarning(UserWarning):
    """Fewer distinct phases than the reconstruction dimension."""
