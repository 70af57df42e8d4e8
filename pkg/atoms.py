# atoms.py - rectangular-patch meta-atom: descriptors, reflection model and datasets
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Protocol, Sequence, Tuple

import numpy as np

from wavegeom import C0, Polarization

logger = logging.getLogger(__name__)

TABLE_HEADER = [
    "d1_m",
    "d2_m",
    "theta_inc_deg",
    "re_gamma_te",
    "im_gamma_te",
    "re_gamma_tm",
    "im_gamma_tm",
]


class DescriptorDomainError(ValueError):
    """Descriptor outside the admissible patch-size range"""


class ReflectionTableError(ValueError):
    """Malformed or non-physical reflection table"""


@dataclass(frozen=True)
class AtomDescriptor:
    d1: float  # patch extent along x [m]
    d2: float  # patch extent along y [m]


@dataclass(frozen=True)
class AtomBounds:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ValueError(f"invalid descriptor bounds lo={self.lo}, hi={self.hi}")

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, value, tol: float = 1e-12) -> bool:
        value = np.asarray(value, dtype=float)
        return bool(np.all((value >= self.lo - tol) & (value <= self.hi + tol)))

    def check(self, d: AtomDescriptor) -> None:
        if not (self.contains(d.d1) and self.contains(d.d2)):
            raise DescriptorDomainError(
                f"descriptor ({d.d1:.6e}, {d.d2:.6e}) m outside [{self.lo:.6e}, {self.hi:.6e}]"
            )


@dataclass(frozen=True)
class Substrate:
    """Provenance only: Rogers RO3003 sheet with copper metallization"""

    thickness: float = 5.1e-4
    permittivity: float = 3.0
    loss_tangent: float = 1e-3
    copper_thickness: float = 35e-6


@dataclass(frozen=True)
class CellSpec:
    pitch_x: float
    pitch_y: float
    frequency: float
    substrate: Substrate = field(default_factory=Substrate)

    @classmethod
    def default(cls, frequency: float = 28e9, pitch_wavelengths: float = 0.4):
        pitch = pitch_wavelengths * C0 / frequency
        return cls(pitch_x=pitch, pitch_y=pitch, frequency=frequency)

    @property
    def wavelength(self) -> float:
        return C0 / self.frequency

    def default_bounds(
        self, lo_fraction: float = 0.05, hi_fraction: float = 0.95
    ) -> AtomBounds:
        pitch = min(self.pitch_x, self.pitch_y)
        bounds = AtomBounds(lo_fraction * pitch, hi_fraction * pitch)
        if bounds.hi >= pitch:
            raise ValueError("descriptor upper bound must stay below the cell pitch")
        return bounds

    def to_dict(self) -> Dict:
        return {
            "pitch_x_m": self.pitch_x,
            "pitch_y_m": self.pitch_y,
            "frequency_hz": self.frequency,
            "substrate": {
                "thickness_m": self.substrate.thickness,
                "relative_permittivity": self.substrate.permittivity,
                "loss_tangent": self.substrate.loss_tangent,
                "copper_thickness_m": self.substrate.copper_thickness,
            },
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CellSpec":
        sub = data.get("substrate", {})
        return cls(
            pitch_x=float(data["pitch_x_m"]),
            pitch_y=float(data["pitch_y_m"]),
            frequency=float(data["frequency_hz"]),
            substrate=Substrate(
                thickness=float(sub.get("thickness_m", 5.1e-4)),
                permittivity=float(sub.get("relative_permittivity", 3.0)),
                loss_tangent=float(sub.get("loss_tangent", 1e-3)),
                copper_thickness=float(sub.get("copper_thickness_m", 35e-6)),
            ),
        )


@dataclass(frozen=True)
class ReflectionSample:
    descriptor: AtomDescriptor
    theta_inc: float
    gamma_te: complex
    gamma_tm: complex

    def gamma(self, pol: Polarization) -> complex:
        return self.gamma_te if Polarization(pol) is Polarization.TE else self.gamma_tm


# Magnitude envelope: -0.1 dB off resonance, -0.5 dB floor at resonance
_G0 = 10 ** (-0.1 / 20)
_G_FLOOR = 10 ** (-0.5 / 20)


@dataclass(frozen=True)
class SyntheticAtomParams:
    d_c0: float  # resonance center [m]
    w: float  # resonance width [m]
    lo: float
    hi: float
    phi_max: float = 162.5  # half phase span [deg]
    g0: float = _G0
    g1: float = _G0 - _G_FLOOR
    kappa: float = 0.05  # incidence detuning

    def __post_init__(self):
        if not (self.g0 <= 1.0 and self.g0 - self.g1 > 0):
            raise ValueError(f"magnitude envelope g0={self.g0}, g1={self.g1} is not passive")
        if not 0 < 2 * self.phi_max <= 360:
            raise ValueError(f"phi_max={self.phi_max} exceeds half a turn")
        if self.w <= 0:
            raise ValueError("resonance width must be positive")

    @classmethod
    def for_cell(cls, cell: CellSpec, bounds: AtomBounds, **overrides):
        pitch = cell.pitch_x
        params = {"d_c0": 0.5 * pitch, "w": 0.15 * pitch, "lo": bounds.lo, "hi": bounds.hi}
        params.update(overrides)
        return cls(**params)

    @property
    def bounds(self) -> AtomBounds:
        return AtomBounds(self.lo, self.hi)


class GammaSource(Protocol):
    """Anything that maps (d1, d2, theta_inc, pol) grids to complex reflection coefficients"""

    bounds: AtomBounds

    def evaluate(
        self, d1: np.ndarray, d2: np.ndarray, theta_inc: float, pol: Polarization
    ) -> np.ndarray: ...


def _synthetic_gamma_array(
    d_dom: np.ndarray, theta_inc: float, p: SyntheticAtomParams
) -> np.ndarray:
    theta = math.radians(theta_inc)
    d_c = p.d_c0 * (1.0 + p.kappa * math.sin(theta) ** 2)
    # normalized so the bound extremes reach +/- phi_max
    half_span = max(d_c - p.lo, p.hi - d_c)
    phase_deg = p.phi_max * np.arctan((d_c - d_dom) / p.w) / math.atan(half_span / p.w)
    magnitude = p.g0 - p.g1 * np.exp(-(((d_dom - d_c) / p.w) ** 2))
    return magnitude * np.exp(1j * np.radians(phase_deg))


def synthetic_gamma(
    d: AtomDescriptor, theta_inc: float, pol: Polarization, p: SyntheticAtomParams
) -> complex:
    """Closed-form resonant stand-in for the full-wave patch response.

    TE resonates with the y-extent (d2) and TM with the x-extent (d1), which
    gives Gamma_TE(a, b) == Gamma_TM(b, a) by construction.
    """
    p.bounds.check(d)
    d_dom = d.d2 if Polarization(pol) is Polarization.TE else d.d1
    return complex(_synthetic_gamma_array(np.asarray(d_dom, dtype=float), theta_inc, p))


class SyntheticAtom:
    """GammaSource backed by the synthetic resonant model"""

    def __init__(self, params: SyntheticAtomParams):
        self.params = params
        self.bounds = params.bounds

    def evaluate(self, d1, d2, theta_inc, pol):
        d1 = np.asarray(d1, dtype=float)
        d2 = np.asarray(d2, dtype=float)
        if not (self.bounds.contains(d1) and self.bounds.contains(d2)):
            raise DescriptorDomainError("synthetic atom queried outside its descriptor bounds")
        d_dom = d2 if Polarization(pol) is Polarization.TE else d1
        return _synthetic_gamma_array(d_dom, theta_inc, self.params)

    def characterize(
        self, points: Sequence[Tuple[AtomDescriptor, float]]
    ) -> List[ReflectionSample]:
        """Evaluate both polarizations at sampled (descriptor, incidence) pairs"""
        samples = []
        for d, theta in points:
            samples.append(
                ReflectionSample(
                    descriptor=d,
                    theta_inc=float(theta),
                    gamma_te=synthetic_gamma(d, theta, Polarization.TE, self.params),
                    gamma_tm=synthetic_gamma(d, theta, Polarization.TM, self.params),
                )
            )
        return samples


def load_reflection_table(path, bounds: AtomBounds = None) -> List[ReflectionSample]:
    """Parse and validate a full-wave reflection table (CSV, mandatory header)"""
    path = Path(path)
    samples = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ReflectionTableError(f"{path}: no samples")
        if [h.strip() for h in header] != TABLE_HEADER:
            raise ReflectionTableError(
                f"{path}: line 1: expected header {','.join(TABLE_HEADER)}"
            )

        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(TABLE_HEADER):
                raise ReflectionTableError(
                    f"{path}: line {line}: expected {len(TABLE_HEADER)} fields, got {len(row)}"
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError as e:
                raise ReflectionTableError(f"{path}: line {line}: {e}") from e
            if not all(math.isfinite(v) for v in values):
                raise ReflectionTableError(f"{path}: line {line}: non-finite value")

            d1, d2, theta, re_te, im_te, re_tm, im_tm = values
            gamma_te = complex(re_te, im_te)
            gamma_tm = complex(re_tm, im_tm)
            for name, g in (("TE", gamma_te), ("TM", gamma_tm)):
                if abs(g) > 1.0 + 1e-9:
                    raise ReflectionTableError(
                        f"{path}: line {line}: |Gamma_{name}|={abs(g):.4f} > 1 (non-passive cell)"
                    )

            descriptor = AtomDescriptor(d1, d2)
            if bounds is not None and not (bounds.contains(d1) and bounds.contains(d2)):
                raise ReflectionTableError(
                    f"{path}: line {line}: descriptor ({d1}, {d2}) outside bounds"
                )
            if d1 <= 0 or d2 <= 0:
                raise ReflectionTableError(f"{path}: line {line}: descriptors must be positive")
            samples.append(ReflectionSample(descriptor, theta, gamma_te, gamma_tm))

    if not samples:
        raise ReflectionTableError(f"{path}: no samples")

    logger.info(f"Loaded {len(samples)} reflection samples from {path}")
    return samples


def write_reflection_table(samples: Sequence[ReflectionSample], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TABLE_HEADER)
        for s in samples:
            writer.writerow(
                [
                    repr(s.descriptor.d1),
                    repr(s.descriptor.d2),
                    repr(s.theta_inc),
                    repr(s.gamma_te.real),
                    repr(s.gamma_te.imag),
                    repr(s.gamma_tm.real),
                    repr(s.gamma_tm.imag),
                ]
            )


def _lhs_unit(n: int, n_factors: int, rng: np.random.Generator, genepool: int) -> np.ndarray:
    # keep the least correlated permutations out of a small pool
    candidates = np.array([rng.permutation(n) for _ in range(max(genepool, n_factors))], dtype=float)
    corr = np.fabs(np.corrcoef(candidates))
    keepers = [0]
    gross_corr = np.zeros(len(candidates))
    for _ in range(n_factors - 1):
        gross_corr += corr[keepers[-1], :]
        gross_corr[keepers] = np.inf
        keepers.append(int(np.argmin(gross_corr)))
    strata = candidates[keepers, :]
    return (strata + rng.random(strata.shape)) / n


def lhs_sample(
    bounds: AtomBounds,
    theta_set: Sequence[float],
    n: int,
    seed: int,
    genepool: int = 32,
) -> List[Tuple[AtomDescriptor, float]]:
    """Latin hypercube over (d1, d2), one independent design per incidence angle"""
    if n < 2:
        raise ValueError(f"Latin hypercube needs n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    points = []
    span = bounds.hi - bounds.lo
    for theta in theta_set:
        unit = _lhs_unit(n, 2, rng, genepool)
        d = bounds.lo + unit * span
        for k in range(n):
            points.append((AtomDescriptor(float(d[0, k]), float(d[1, k])), float(theta)))
    return points


def envelope_report(source: GammaSource, grid_res: int, theta_inc: float = 0.0) -> Dict:
    """Magnitude/phase envelope of a gamma source over a uniform descriptor grid"""
    if grid_res < 8:
        raise ValueError(f"grid_res must be >= 8, got {grid_res}")
    axis = np.linspace(source.bounds.lo, source.bounds.hi, grid_res)
    d1, d2 = np.meshgrid(axis, axis, indexing="ij")

    report = {"grid_res": grid_res, "theta_inc_deg": theta_inc}
    for pol in Polarization:
        gamma = np.asarray(source.evaluate(d1, d2, theta_inc, pol))
        mag = np.abs(gamma)
        with np.errstate(divide="ignore"):
            mag_db = 20 * np.log10(mag)
        phase = np.degrees(np.angle(gamma))
        # reflection efficiency as the amplitude ratio |Gamma| in percent
        efficiency = 100.0 * mag
        report[pol.value] = {
            "min_mag_db": float(np.min(mag_db)),
            "max_mag_db": float(np.max(mag_db)),
            "phase_coverage_deg": float(np.max(phase) - np.min(phase)),
            "min_efficiency_pct": float(np.min(efficiency)),
            "fraction_efficiency_98": float(np.mean(efficiency >= 98.0)),
        }
    return report
