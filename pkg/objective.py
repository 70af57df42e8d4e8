# objective.py - multi-polarization reciprocal-power cost with precomputed steering
import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from atoms import CellSpec, DescriptorDomainError
from fields import axis_integrals, field_prefactor, cell_centers, unit_current
from kernels import steered_sum
from surrogate import GammaLUT
from wavegeom import UV, Direction, Polarization, PlaneWaveSpec, to_direction_cosines

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolarizationTarget:
    reflection: Direction
    alpha: float
    illumination: PlaneWaveSpec

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"target weight alpha must be finite and >= 0, got {self.alpha}")
        if not abs(self.reflection.theta) <= 90.0:
            raise ValueError(
                f"target direction theta={self.reflection.theta} deg is outside the visible range"
            )

    @property
    def uv(self) -> UV:
        return to_direction_cosines(self.reflection)


@dataclass(frozen=True)
class DesignTargets:
    te: PolarizationTarget
    tm: PolarizationTarget

    def __post_init__(self):
        if self.te.illumination.polarization is not Polarization.TE:
            raise ValueError("TE target must carry a TE illumination")
        if self.tm.illumination.polarization is not Polarization.TM:
            raise ValueError("TM target must carry a TM illumination")
        if not (self.te.alpha > 0 or self.tm.alpha > 0):
            raise ValueError("at least one polarization weight alpha must be positive")

    def __getitem__(self, pol: Polarization) -> PolarizationTarget:
        return self.te if Polarization(pol) is Polarization.TE else self.tm

    def active(self):
        return [pol for pol in Polarization if self[pol].alpha > 0]


@dataclass(frozen=True)
class SteeringEntry:
    alpha: float
    target: UV
    weights: np.ndarray  # complex (P*Q,), row-major cell integrals at the target
    unit_current: np.ndarray  # complex (3,), current for Gamma = 1
    field_scale: float  # |k0/4pi|^2 * ||J1||^2

    def power(self, array_sum: complex) -> float:
        return self.field_scale * abs(array_sum) ** 2


@dataclass(frozen=True)
class SteeringTable:
    P: int
    Q: int
    entries: Dict[Polarization, Optional[SteeringEntry]]

    def __getitem__(self, pol: Polarization) -> Optional[SteeringEntry]:
        return self.entries[Polarization(pol)]


def precompute_steering(targets: DesignTargets, P: int, Q: int, cell: CellSpec) -> SteeringTable:
    """Hoist every Gamma-independent factor of the target fields out of the cost"""
    x, y = cell_centers(P, Q, cell)
    entries = {}
    for pol in Polarization:
        target = targets[pol]
        if target.alpha == 0:
            entries[pol] = None
            continue
        wave = target.illumination
        uv = target.uv
        inc = to_direction_cosines(wave.incidence)
        k0 = wave.wavenumber
        ix = axis_integrals(np.array([uv.u]), inc.u, x, cell.pitch_x, k0)[0]
        iy = axis_integrals(np.array([uv.v]), inc.v, y, cell.pitch_y, k0)[0]
        j1 = unit_current(wave)
        entries[pol] = SteeringEntry(
            alpha=float(target.alpha),
            target=uv,
            weights=np.ascontiguousarray(np.outer(ix, iy).ravel()),
            unit_current=j1,
            field_scale=abs(field_prefactor(wave)) ** 2 * float(np.sum(np.abs(j1) ** 2)),
        )
    return SteeringTable(P, Q, entries)


def _split(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    return np.ascontiguousarray(x[0::2]), np.ascontiguousarray(x[1::2])


def target_powers(
    x: np.ndarray, luts: Mapping[Polarization, GammaLUT], steering: SteeringTable
) -> Dict[Polarization, float]:
    """|E_pol(target_pol)|^2 for every weighted polarization"""
    d1, d2 = _split(x)
    powers = {}
    for pol, entry in steering.entries.items():
        if entry is None:
            continue
        lut = luts[pol]
        if not (lut.bounds.contains(d1) and lut.bounds.contains(d2)):
            raise DescriptorDomainError("candidate descriptor vector leaves the LUT bounds")
        s = steered_sum(lut.values[pol], lut.lo, lut.hi, d1, d2, entry.weights)
        powers[pol] = entry.power(s)
    return powers


def cost(
    x: np.ndarray,
    targets: DesignTargets,
    luts: Mapping[Polarization, GammaLUT],
    steering: SteeringTable,
) -> float:
    """sum over polarizations of alpha / |E(target)|^2; +inf when a weighted field vanishes"""
    total = 0.0
    for pol, power in target_powers(x, luts, steering).items():
        if not power > 0:
            return math.inf
        total += targets[pol].alpha / power
    return total


class CostFunction:
    """Picklable, thread-safe closure over the immutable steering table and LUTs"""

    def __init__(
        self,
        targets: DesignTargets,
        luts: Mapping[Polarization, GammaLUT],
        steering: SteeringTable,
    ):
        self.targets = targets
        self.luts = dict(luts)
        self.steering = steering

    def __call__(self, x: np.ndarray) -> float:
        return cost(x, self.targets, self.luts, self.steering)
