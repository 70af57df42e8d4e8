# wavegeom.py - directions, wave vectors and the TE/TM polarization basis
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import constants

C0 = constants.c
ZETA0 = constants.physical_constants["characteristic impedance of vacuum"][0]

# Complex 3-vector (x, y, z); numpy array of shape (3,)
Vec3C = np.ndarray


class Polarization(str, enum.Enum):
    TE = "TE"
    TM = "TM"


@dataclass(frozen=True)
class Direction:
    """Signed polar angle from +z and azimuth, both in degrees"""

    theta: float
    phi: float = 0.0


@dataclass(frozen=True)
class UV:
    u: float
    v: float

    @property
    def visible(self) -> bool:
        return self.u * self.u + self.v * self.v <= 1.0 + 1e-12


@dataclass(frozen=True)
class PlaneWaveSpec:
    polarization: Polarization
    incidence: Direction
    amplitude: complex = 1.0 + 0.0j
    frequency: float = 28e9

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError(f"frequency must be positive, got {self.frequency}")
        if not np.isfinite(complex(self.amplitude)):
            raise ValueError(f"amplitude must be finite, got {self.amplitude}")
        object.__setattr__(self, "polarization", Polarization(self.polarization))

    @property
    def wavenumber(self) -> float:
        return wavenumber(self.frequency)

    @property
    def wavelength(self) -> float:
        return C0 / self.frequency


def wavenumber(frequency: float) -> float:
    return 2.0 * math.pi * frequency / C0


def _angles(d: Direction):
    # single degrees -> radians boundary
    return math.radians(d.theta), math.radians(d.phi)


def _propagation_unit_vector(incidence: Direction) -> np.ndarray:
    theta, phi = _angles(incidence)
    return -np.array(
        [
            math.sin(theta) * math.cos(phi),
            math.sin(theta) * math.sin(phi),
            math.cos(theta),
        ]
    )


def wave_vector(spec: PlaneWaveSpec) -> np.ndarray:
    """Incident wave vector k_inc in rad/m (travels towards -z)"""
    return spec.wavenumber * _propagation_unit_vector(spec.incidence)


def polarization_unit_vector(spec: PlaneWaveSpec) -> np.ndarray:
    """TE/TM mode unit vector of an incident plane wave.

    TE is (k x z)/|k x z|, written in closed form as sgn(theta)*(-sin phi, cos phi, 0)
    so that normal incidence takes the theta -> 0+ limit (y for phi=0).
    TM is k x e_TE.
    """
    theta, phi = _angles(spec.incidence)
    sign = -1.0 if theta < 0 else 1.0
    e_te = sign * np.array([-math.sin(phi), math.cos(phi), 0.0])
    if spec.polarization is Polarization.TE:
        return e_te
    return np.cross(_propagation_unit_vector(spec.incidence), e_te)


def reflected_unit_vector(incidence: Direction) -> np.ndarray:
    """Unit vector of the specularly reflected wave (travels towards +z)"""
    k_hat = _propagation_unit_vector(incidence)
    return np.array([k_hat[0], k_hat[1], -k_hat[2]])


def to_direction_cosines(d: Direction) -> UV:
    theta, phi = _angles(d)
    return UV(math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi))


def specular_direction(incidence: Direction) -> UV:
    uv = to_direction_cosines(incidence)
    return UV(-uv.u, -uv.v)
