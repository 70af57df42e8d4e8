# fields.py - aperture reflection maps, equivalent currents and far-field patterns
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from atoms import AtomBounds, AtomDescriptor, CellSpec, DescriptorDomainError
from config import PATTERN_CONFIG
from surrogate import GammaLUT
from wavegeom import (
    ZETA0,
    UV,
    Polarization,
    PlaneWaveSpec,
    polarization_unit_vector,
    reflected_unit_vector,
    to_direction_cosines,
)

logger = logging.getLogger(__name__)

_Z_HAT = np.array([0.0, 0.0, 1.0])
_VISIBLE_TOL = 1e-12

PATTERN_HEADER = ["u", "v", "re_Ex", "im_Ex", "re_Ey", "im_Ey", "re_Ez", "im_Ez", "mag", "mag_db_norm"]
PATCHES_HEADER = ["p", "q", "x_center_m", "y_center_m", "d1_m", "d2_m"]
GAMMA_MAP_HEADER = ["p", "q", "x_m", "y_m", "mag", "phase_deg"]


class InvisibleDirectionError(ValueError):
    """Observation direction outside the visible range u^2 + v^2 <= 1"""


@dataclass(eq=False)
class EmsLayout:
    """P x Q patch layout; descriptors[p, q] = (d1, d2) in meters"""

    descriptors: np.ndarray
    cell: CellSpec
    bounds: AtomBounds

    def __post_init__(self):
        self.descriptors = np.array(self.descriptors, dtype=float)
        if self.descriptors.ndim != 3 or self.descriptors.shape[2] != 2:
            raise ValueError(f"descriptors must have shape (P, Q, 2), got {self.descriptors.shape}")
        if self.descriptors.shape[0] < 1 or self.descriptors.shape[1] < 1:
            raise ValueError("layout needs P, Q >= 1")
        if not self.bounds.contains(self.descriptors):
            worst = self.descriptors[
                (self.descriptors < self.bounds.lo) | (self.descriptors > self.bounds.hi)
            ]
            raise DescriptorDomainError(
                f"{worst.size} descriptor value(s) outside [{self.bounds.lo:.6e}, {self.bounds.hi:.6e}] m"
            )

    @property
    def P(self) -> int:
        return self.descriptors.shape[0]

    @property
    def Q(self) -> int:
        return self.descriptors.shape[1]

    @property
    def aperture_side(self) -> Tuple[float, float]:
        return self.P * self.cell.pitch_x, self.Q * self.cell.pitch_y

    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cell center coordinates x_p (length P) and y_q (length Q)"""
        return cell_centers(self.P, self.Q, self.cell)

    def descriptor(self, p: int, q: int) -> AtomDescriptor:
        d1, d2 = self.descriptors[p, q]
        return AtomDescriptor(float(d1), float(d2))

    def to_vector(self) -> np.ndarray:
        # cell-interleaved, row-major: [d1_00, d2_00, d1_01, d2_01, ...]
        return self.descriptors.reshape(-1).copy()

    @classmethod
    def from_vector(
        cls, vector: np.ndarray, P: int, Q: int, cell: CellSpec, bounds: AtomBounds
    ) -> "EmsLayout":
        vector = np.asarray(vector, dtype=float)
        if vector.size != 2 * P * Q:
            raise ValueError(f"descriptor vector length {vector.size} != 2*P*Q = {2 * P * Q}")
        return cls(vector.reshape(P, Q, 2), cell, bounds)

    @classmethod
    def uniform(
        cls, P: int, Q: int, cell: CellSpec, bounds: AtomBounds, d: Optional[AtomDescriptor] = None
    ) -> "EmsLayout":
        d = d or AtomDescriptor(bounds.mid, bounds.mid)
        descriptors = np.empty((P, Q, 2))
        descriptors[..., 0] = d.d1
        descriptors[..., 1] = d.d2
        return cls(descriptors, cell, bounds)

    def to_dict(self) -> Dict:
        data = {"P": self.P, "Q": self.Q}
        data.update(self.cell.to_dict())
        data["bounds"] = {"lo_m": self.bounds.lo, "hi_m": self.bounds.hi}
        data["descriptors_m"] = self.descriptors.reshape(-1, 2).tolist()
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "EmsLayout":
        P, Q = int(data["P"]), int(data["Q"])
        descriptors = np.array(data["descriptors_m"], dtype=float)
        if descriptors.shape != (P * Q, 2):
            raise ValueError(
                f"layout lists {descriptors.shape[0]} descriptors, expected P*Q = {P * Q}"
            )
        return cls(
            descriptors.reshape(P, Q, 2),
            CellSpec.from_dict(data),
            AtomBounds(float(data["bounds"]["lo_m"]), float(data["bounds"]["hi_m"])),
        )


def cell_centers(P: int, Q: int, cell: CellSpec) -> Tuple[np.ndarray, np.ndarray]:
    x = (np.arange(P) - (P - 1) / 2.0) * cell.pitch_x
    y = (np.arange(Q) - (Q - 1) / 2.0) * cell.pitch_y
    return x, y


@dataclass
class GammaMap:
    values: np.ndarray  # complex (P, Q)
    theta_inc: float
    polarization: Polarization
    cell: CellSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        self.polarization = Polarization(self.polarization)
        if np.any(np.abs(self.values) > 1.0 + 1e-9):
            raise ValueError("reflection map is not passive (|Gamma| > 1)")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


def gamma_map(layout: EmsLayout, lut: GammaLUT, pol: Polarization) -> GammaMap:
    values = lut.lookup(layout.descriptors[..., 0], layout.descriptors[..., 1], pol)
    return GammaMap(values, lut.theta_inc, pol, layout.cell)


@dataclass(frozen=True)
class CellCurrent:
    vector: np.ndarray  # complex (3,), tangential


def _current_vector(gamma: complex, wave: PlaneWaveSpec) -> np.ndarray:
    e_field = gamma * wave.amplitude * polarization_unit_vector(wave)
    k_refl = reflected_unit_vector(wave.incidence)
    j_e = np.cross(_Z_HAT, np.cross(k_refl, e_field)) / ZETA0
    j_m = -np.cross(_Z_HAT, e_field)
    j = np.cross(_Z_HAT, ZETA0 * np.cross(_Z_HAT, j_e) + j_m)
    j[2] = 0.0  # exact: z x (...) has no z component
    return j


def cell_current(gamma: complex, wave: PlaneWaveSpec) -> CellCurrent:
    """Equivalent aperture current of one cell for reflection coefficient gamma"""
    return CellCurrent(_current_vector(complex(gamma), wave))


def _sinc(t: np.ndarray) -> np.ndarray:
    # np.sinc is the normalized sin(pi x)/(pi x)
    return np.sinc(np.asarray(t) / np.pi)


def axis_integrals(s: np.ndarray, s_inc: float, centers: np.ndarray, pitch: float, k0: float):
    """Separable 1-D cell integrals, shape (n_directions, n_cells)"""
    a = (np.asarray(s, dtype=float) + s_inc)[:, None]
    return pitch * _sinc(k0 * a * pitch / 2.0) * np.exp(1j * k0 * a * centers[None, :])


def cell_radiation_integral(
    uv: UV, wave: PlaneWaveSpec, center: Tuple[float, float], dims: Tuple[float, float]
) -> complex:
    """Closed-form integral of exp(jk0 r.r') exp(-j k_inc.r') over one rectangular cell"""
    k0 = wave.wavenumber
    inc = to_direction_cosines(wave.incidence)
    ix = axis_integrals(np.array([uv.u]), inc.u, np.array([center[0]]), dims[0], k0)
    iy = axis_integrals(np.array([uv.v]), inc.v, np.array([center[1]]), dims[1], k0)
    return complex(ix[0, 0] * iy[0, 0])


def unit_current(wave: PlaneWaveSpec) -> np.ndarray:
    """Current for Gamma = 1; every cell current is Gamma_pq times this vector"""
    return _current_vector(1.0 + 0.0j, wave)


def field_prefactor(wave: PlaneWaveSpec) -> complex:
    return 1j * wave.wavenumber / (4.0 * math.pi)


def array_sums(gmap: GammaMap, wave: PlaneWaveSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """sum_pq Gamma_pq * A_pq(u, v) for many directions"""
    P, Q = gmap.shape
    x, y = cell_centers(P, Q, gmap.cell)
    k0 = wave.wavenumber
    inc = to_direction_cosines(wave.incidence)
    ix = axis_integrals(u, inc.u, x, gmap.cell.pitch_x, k0)
    iy = axis_integrals(v, inc.v, y, gmap.cell.pitch_y, k0)
    return np.einsum("np,pq,nq->n", ix, gmap.values, iy)


def _check_visible(u: np.ndarray, v: np.ndarray) -> None:
    r2 = np.asarray(u) ** 2 + np.asarray(v) ** 2
    if np.any(r2 > 1.0 + _VISIBLE_TOL):
        raise InvisibleDirectionError(
            f"direction with u^2+v^2 = {float(np.max(r2)):.6f} is outside the visible range"
        )


def far_fields(gmap: GammaMap, wave: PlaneWaveSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Reflected far field E for many directions, complex shape (n, 3)"""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    _check_visible(u, v)
    sums = array_sums(gmap, wave, u, v)
    return field_prefactor(wave) * sums[:, None] * unit_current(wave)[None, :]


def far_field_at(gmap: GammaMap, wave: PlaneWaveSpec, uv: UV):
    return far_fields(gmap, wave, np.array([uv.u]), np.array([uv.v]))[0]


def field_magnitude(e: np.ndarray) -> np.ndarray:
    """Standard complex vector norm sqrt(sum_c |E_c|^2) along the last axis"""
    return np.sqrt(np.sum(np.abs(e) ** 2, axis=-1))


@dataclass
class FarFieldPattern:
    uv: np.ndarray  # (n, 2)
    field: np.ndarray  # complex (n, 3)
    magnitude: np.ndarray  # (n,)
    polarization: Polarization
    kind: str  # "cut" | "grid"
    grid_shape: Optional[Tuple[int, int]] = None
    grid_index: Optional[np.ndarray] = None  # (n, 2) node indices for grids
    metadata: Dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.uv.shape[0]

    def db_normalized(self, floor_db: float = PATTERN_CONFIG["db_floor"]) -> np.ndarray:
        peak = float(np.max(self.magnitude)) if len(self) else 0.0
        if peak <= 0:
            return np.full(len(self), floor_db)
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(self.magnitude / peak)
        return np.maximum(db, floor_db)


def _pattern_metadata(gmap: GammaMap, wave: PlaneWaveSpec, **extra) -> Dict:
    data = {
        "polarization": Polarization(wave.polarization).value,
        "theta_inc_deg": wave.incidence.theta,
        "phi_inc_deg": wave.incidence.phi,
        "amplitude": [complex(wave.amplitude).real, complex(wave.amplitude).imag],
        "frequency_hz": wave.frequency,
        "layout_shape": list(gmap.shape),
    }
    data.update(extra)
    return data


def pattern_cut(
    gmap: GammaMap,
    wave: PlaneWaveSpec,
    phi_deg: float = 0.0,
    n_samples: int = PATTERN_CONFIG["cut_samples"],
) -> FarFieldPattern:
    if n_samples < 2:
        raise ValueError(f"pattern cut needs at least 2 samples, got {n_samples}")
    s = np.linspace(-1.0, 1.0, n_samples)
    phi = math.radians(phi_deg)
    u = s * math.cos(phi)
    v = s * math.sin(phi)
    e = far_fields(gmap, wave, u, v)
    return FarFieldPattern(
        uv=np.column_stack([u, v]),
        field=e,
        magnitude=field_magnitude(e),
        polarization=wave.polarization,
        kind="cut",
        metadata=_pattern_metadata(gmap, wave, phi_cut_deg=phi_deg),
    )


def pattern_grid(
    gmap: GammaMap,
    wave: PlaneWaveSpec,
    n_u: int = PATTERN_CONFIG["grid_u"],
    n_v: int = PATTERN_CONFIG["grid_v"],
) -> FarFieldPattern:
    """Uniform (u, v) grid restricted to the unit disk"""
    if n_u < 2 or n_v < 2:
        raise ValueError(f"pattern grid needs at least 2x2 nodes, got {n_u}x{n_v}")
    uu, vv = np.meshgrid(np.linspace(-1.0, 1.0, n_u), np.linspace(-1.0, 1.0, n_v), indexing="ij")
    inside = uu**2 + vv**2 <= 1.0 + _VISIBLE_TOL
    index = np.argwhere(inside)
    u, v = uu[inside], vv[inside]
    e = far_fields(gmap, wave, u, v)
    return FarFieldPattern(
        uv=np.column_stack([u, v]),
        field=e,
        magnitude=field_magnitude(e),
        polarization=wave.polarization,
        kind="grid",
        grid_shape=(n_u, n_v),
        grid_index=index,
        metadata=_pattern_metadata(gmap, wave),
    )


@dataclass(frozen=True)
class PeakMetrics:
    uv_peak: UV
    magnitude_peak: float
    sidelobe_level_db: float  # -inf when no secondary lobe exists

    def to_dict(self) -> Dict:
        return {
            "u_peak": self.uv_peak.u,
            "v_peak": self.uv_peak.v,
            "magnitude_peak": self.magnitude_peak,
            "sidelobe_level_db": self.sidelobe_level_db,
        }


def _pattern_image(pattern: FarFieldPattern) -> Tuple[np.ndarray, np.ndarray]:
    """Pattern magnitudes on their sampling lattice; invisible grid nodes are -1"""
    if pattern.kind == "grid":
        image = np.full(pattern.grid_shape, -1.0)
        rows, cols = pattern.grid_index[:, 0], pattern.grid_index[:, 1]
        image[rows, cols] = pattern.magnitude
        lookup = np.full(pattern.grid_shape, -1, dtype=int)
        lookup[rows, cols] = np.arange(len(pattern))
        return image, lookup
    return pattern.magnitude.copy(), np.arange(len(pattern))


def peak_metrics(pattern: FarFieldPattern) -> PeakMetrics:
    """Global maximum and the highest local maximum outside the -3 dB main lobe"""
    if len(pattern) == 0:
        raise ValueError("cannot compute peak metrics of an empty pattern")

    k_peak = int(np.argmax(pattern.magnitude))
    peak = float(pattern.magnitude[k_peak])
    uv_peak = UV(float(pattern.uv[k_peak, 0]), float(pattern.uv[k_peak, 1]))
    if peak <= 0:
        return PeakMetrics(uv_peak, peak, -math.inf)

    image, lookup = _pattern_image(pattern)
    peak_pos = np.unravel_index(int(np.flatnonzero(lookup.ravel() == k_peak)[0]), image.shape)

    labels, _ = ndimage.label(image >= peak / math.sqrt(2.0))
    main_lobe = labels == labels[peak_pos]

    local_max = (image == ndimage.maximum_filter(image, size=3, mode="constant", cval=-1.0)) & (
        image > 0
    )
    secondary = local_max & ~main_lobe
    if not np.any(secondary):
        return PeakMetrics(uv_peak, peak, -math.inf)
    sidelobe = float(np.max(image[secondary]))
    return PeakMetrics(uv_peak, peak, 20.0 * math.log10(sidelobe / peak))


def write_pattern_csv(pattern: FarFieldPattern, path) -> None:
    db = pattern.db_normalized()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(PATTERN_HEADER)
        for k in range(len(pattern)):
            e = pattern.field[k]
            writer.writerow(
                [
                    repr(float(pattern.uv[k, 0])),
                    repr(float(pattern.uv[k, 1])),
                    repr(e[0].real), repr(e[0].imag),
                    repr(e[1].real), repr(e[1].imag),
                    repr(e[2].real), repr(e[2].imag),
                    repr(float(pattern.magnitude[k])),
                    repr(float(db[k])),
                ]
            )
    logger.debug(f"Pattern ({pattern.kind}, {len(pattern)} samples) written to {path}")


def write_layout_json(layout: EmsLayout, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(layout.to_dict(), f, indent=2)


def load_layout_json(path) -> EmsLayout:
    with open(path, "r", encoding="utf-8") as f:
        return EmsLayout.from_dict(json.load(f))


def write_patches_csv(layout: EmsLayout, path) -> None:
    x, y = layout.centers()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(PATCHES_HEADER)
        for p in range(layout.P):
            for q in range(layout.Q):
                d1, d2 = layout.descriptors[p, q]
                writer.writerow([p, q, repr(float(x[p])), repr(float(y[q])), repr(float(d1)), repr(float(d2))])


def write_gamma_map_csv(gmap: GammaMap, path) -> None:
    P, Q = gmap.shape
    x, y = cell_centers(P, Q, gmap.cell)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(GAMMA_MAP_HEADER)
        for p in range(P):
            for q in range(Q):
                g = gmap.values[p, q]
                writer.writerow(
                    [p, q, repr(float(x[p])), repr(float(y[q])), repr(float(abs(g))),
                     repr(float(np.degrees(np.angle(g))))]
                )
