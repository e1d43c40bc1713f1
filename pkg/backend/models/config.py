"""
Validated system configuration.  Every quantity is in atomic units; `raw` keeps
the document as written (laboratory units) for serialization and hashing.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from models.physics import (AtomSpec, DispersionTail, RadialGrid, SpectroscopicConstants,
                            SpinSplittingFit, SwitchingFunction)

POTENTIAL_KINDS = ('singlet', 'barycenter', 'excited')


@dataclass(frozen=True)
class TuneBlock:
    objective: str
    target: float
    bounds: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class PotentialBlock:
    label: str
    kind: str
    constants: SpectroscopicConstants
    r_cut: Optional[float] = None
    betas: Tuple[float, ...] = ()
    eta: float = 0.0
    switch: Optional[SwitchingFunction] = None
    asymptote: float = 0.0
    reference: Optional[SpectroscopicConstants] = None
    tune: Optional[TuneBlock] = None


@dataclass(frozen=True)
class DipoleRef:
    upper: str
    lower: str
    path: Path


@dataclass(frozen=True)
class ScanBlock:
    b_min: float
    b_max: float
    b_step: float
    mtot: float
    ell_values: Tuple[int, ...]
    collision_energy: float

    @property
    def fields(self):
        count = int(round((self.b_max - self.b_min) / self.b_step)) + 1
        return [self.b_min + i * self.b_step for i in range(count)]


@dataclass(frozen=True)
class SolverBlock:
    rovib_step: float = 1e-3
    zero_energy_step: float = 5e-3
    zero_energy_match: float = 200.0
    energy_floor: float = 0.0
    refine_tolerance: float = 1e-4


@dataclass(frozen=True)
class SystemConfig:
    name: str
    fr: AtomSpec
    ag: AtomSpec
    tail: DispersionTail
    r_disp: float
    spin_fit: SpinSplittingFit
    include_dipolar: bool
    potentials: Dict[str, PotentialBlock]
    dipoles: Tuple[DipoleRef, ...]
    scan: ScanBlock
    grid: RadialGrid
    match_radius: float
    bound_r_max: float
    solver: SolverBlock
    source: Optional[Path] = None
    provenance: Tuple[str, ...] = ()
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def dipole(self, upper, lower):
        for ref in self.dipoles:
            if ref.upper == upper and ref.lower == lower:
                return ref
        return None
