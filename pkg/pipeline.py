# pipeline.py - twin -> LUT -> swarm -> evaluation loop, oracle designer and reports
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from atoms import (
    AtomBounds,
    CellSpec,
    ReflectionSample,
    SyntheticAtom,
    SyntheticAtomParams,
    lhs_sample,
    load_reflection_table,
)
from config import (
    OUTPUT_DIR,
    PATTERN_CONFIG,
    PERFORMANCE_CONFIG,
    SWARM_CONFIG,
    SYNTHESIS_CONFIG,
    TWIN_CONFIG,
    ConfigError,
)
from fields import (
    EmsLayout,
    FarFieldPattern,
    GammaMap,
    PeakMetrics,
    cell_centers,
    far_field_at,
    field_magnitude,
    gamma_map,
    pattern_cut,
    pattern_grid,
    peak_metrics,
)
from objective import (
    CostFunction,
    DesignTargets,
    PolarizationTarget,
    precompute_steering,
    target_powers,
)
from pso import OptimizationResult, ProgressSink, SwarmConfig, optimize
from surrogate import GammaLUT, GammaTwin, compile_lut, train
from wavegeom import UV, Direction, Polarization, PlaneWaveSpec, to_direction_cosines

logger = logging.getLogger(__name__)

ORACLE_SEARCH_POINTS = 1024
# decimals (degrees) at which oracle phases are compared
_PHASE_DECIMALS = 9


def default_document() -> Dict:
    """Configuration document with every default filled in"""
    illumination = {
        "theta_deg": 0.0,
        "phi_deg": SYNTHESIS_CONFIG["phi_deg"],
        "amplitude_re": SYNTHESIS_CONFIG["amplitude_re"],
        "amplitude_im": SYNTHESIS_CONFIG["amplitude_im"],
    }
    target = {"theta_deg": None, "phi_deg": SYNTHESIS_CONFIG["phi_deg"], "alpha": SYNTHESIS_CONFIG["alpha"]}
    return {
        "layout": {
            "P": None,
            "Q": None,
            "frequency_hz": SYNTHESIS_CONFIG["frequency_hz"],
            "pitch_wavelengths": SYNTHESIS_CONFIG["pitch_wavelengths"],
        },
        "atoms": {
            "bounds_lo_fraction": SYNTHESIS_CONFIG["bounds_lo_fraction"],
            "bounds_hi_fraction": SYNTHESIS_CONFIG["bounds_hi_fraction"],
        },
        "illumination": {pol.value: dict(illumination) for pol in Polarization},
        "targets": {pol.value: dict(target) for pol in Polarization},
        "twin": {
            "source": TWIN_CONFIG["source"],
            "table_path": TWIN_CONFIG["table_path"],
            "n_train": TWIN_CONFIG["n_train"],
            "seed": TWIN_CONFIG["seed"],
            "lut_resolution": TWIN_CONFIG["lut_resolution"],
        },
        "pso": dict(SWARM_CONFIG),
        "patterns": {
            "cut_samples": PATTERN_CONFIG["cut_samples"],
            "grid_u": PATTERN_CONFIG["grid_u"],
            "grid_v": PATTERN_CONFIG["grid_v"],
        },
        "output_dir": OUTPUT_DIR,
        "threads": PERFORMANCE_CONFIG["threads"],
    }


def _field(doc: Dict, dotted: str):
    node = doc
    for key in dotted.split("."):
        node = node[key]
    return node


def _number(doc: Dict, dotted: str, kind=float, minimum=None, strict=False, allow_none=False):
    value = _field(doc, dotted)
    if value is None:
        if allow_none:
            return None
        raise ConfigError(f"{dotted} is required")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{dotted} must be a number, got {value!r}")
    if kind is int and float(value) != int(value):
        raise ConfigError(f"{dotted} must be an integer, got {value!r}")
    value = kind(value)
    if not math.isfinite(value):
        raise ConfigError(f"{dotted} must be finite, got {value!r}")
    if minimum is not None and (value <= minimum if strict else value < minimum):
        op = ">" if strict else ">="
        raise ConfigError(f"{dotted} must be {op} {minimum}, got {value!r}")
    return value


@dataclass(frozen=True)
class DesignConfig:
    P: int
    Q: int
    frequency_hz: float
    pitch_wavelengths: float
    bounds_lo_fraction: float
    bounds_hi_fraction: float
    targets: DesignTargets
    twin_source: str = TWIN_CONFIG["source"]
    table_path: Optional[str] = None
    n_train: int = TWIN_CONFIG["n_train"]
    twin_seed: int = TWIN_CONFIG["seed"]
    lut_resolution: int = TWIN_CONFIG["lut_resolution"]
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    warm_start: bool = False
    cut_samples: int = PATTERN_CONFIG["cut_samples"]
    grid_u: int = PATTERN_CONFIG["grid_u"]
    grid_v: int = PATTERN_CONFIG["grid_v"]
    output_dir: str = OUTPUT_DIR
    threads: int = 1

    @property
    def cell(self) -> CellSpec:
        return CellSpec.default(self.frequency_hz, self.pitch_wavelengths)

    @property
    def bounds(self) -> AtomBounds:
        return self.cell.default_bounds(self.bounds_lo_fraction, self.bounds_hi_fraction)

    @property
    def waves(self) -> Dict[Polarization, PlaneWaveSpec]:
        return {pol: self.targets[pol].illumination for pol in Polarization}

    @property
    def incidence_angles(self) -> List[float]:
        return sorted({self.targets[pol].illumination.incidence.theta for pol in Polarization})

    @classmethod
    def from_dict(cls, doc: Dict) -> "DesignConfig":
        """Validate a fully merged configuration document"""
        P = _number(doc, "layout.P", int, minimum=1)
        Q = _number(doc, "layout.Q", int, minimum=1)
        frequency = _number(doc, "layout.frequency_hz", minimum=0, strict=True)
        pitch = _number(doc, "layout.pitch_wavelengths", minimum=0, strict=True)
        lo_frac = _number(doc, "atoms.bounds_lo_fraction", minimum=0, strict=True)
        hi_frac = _number(doc, "atoms.bounds_hi_fraction", minimum=0, strict=True)
        if not lo_frac < hi_frac < 1:
            raise ConfigError("atoms.bounds_lo_fraction < atoms.bounds_hi_fraction < 1 is required")

        per_pol = {}
        for pol in Polarization:
            key = pol.value
            alpha = _number(doc, f"targets.{key}.alpha", minimum=0)
            theta_refl = _number(doc, f"targets.{key}.theta_deg", allow_none=alpha == 0)
            phi_refl = _number(doc, f"targets.{key}.phi_deg")
            if theta_refl is not None and abs(theta_refl) > 90:
                raise ConfigError(f"targets.{key}.theta_deg must lie in [-90, 90], got {theta_refl}")
            theta_inc = _number(doc, f"illumination.{key}.theta_deg")
            if abs(theta_inc) >= 90:
                raise ConfigError(f"illumination.{key}.theta_deg must lie in (-90, 90), got {theta_inc}")
            wave = PlaneWaveSpec(
                polarization=pol,
                incidence=Direction(theta_inc, _number(doc, f"illumination.{key}.phi_deg")),
                amplitude=complex(
                    _number(doc, f"illumination.{key}.amplitude_re"),
                    _number(doc, f"illumination.{key}.amplitude_im"),
                ),
                frequency=frequency,
            )
            per_pol[pol] = PolarizationTarget(
                Direction(theta_refl if theta_refl is not None else 0.0, phi_refl), alpha, wave
            )
        try:
            targets = DesignTargets(per_pol[Polarization.TE], per_pol[Polarization.TM])
        except ValueError as e:
            raise ConfigError(f"targets: {e}") from e

        source = _field(doc, "twin.source")
        if source not in ("synthetic", "table"):
            raise ConfigError(f"twin.source must be 'synthetic' or 'table', got {source!r}")
        table_path = _field(doc, "twin.table_path")
        if source == "table" and not table_path:
            raise ConfigError("twin.table_path is required when twin.source is 'table'")

        try:
            swarm = SwarmConfig(
                swarm_size=_number(doc, "pso.swarm_size", int),
                iterations=_number(doc, "pso.iterations", int),
                w_start=_number(doc, "pso.w_start"),
                w_end=_number(doc, "pso.w_end"),
                c1=_number(doc, "pso.c1", minimum=0),
                c2=_number(doc, "pso.c2", minimum=0),
                v_max_fraction=_number(doc, "pso.v_max_fraction"),
                seed=_number(doc, "pso.seed", int, minimum=0),
                stagnation_window=_number(doc, "pso.stagnation_window", int, minimum=0),
            )
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"pso: {e}") from e
        warm_start = _field(doc, "pso.warm_start")
        if not isinstance(warm_start, bool):
            raise ConfigError(f"pso.warm_start must be true or false, got {warm_start!r}")

        return cls(
            P=P,
            Q=Q,
            frequency_hz=frequency,
            pitch_wavelengths=pitch,
            bounds_lo_fraction=lo_frac,
            bounds_hi_fraction=hi_frac,
            targets=targets,
            twin_source=source,
            table_path=table_path,
            n_train=_number(doc, "twin.n_train", int, minimum=8),
            twin_seed=_number(doc, "twin.seed", int, minimum=0),
            lut_resolution=_number(doc, "twin.lut_resolution", int, minimum=16),
            swarm=swarm,
            warm_start=warm_start,
            cut_samples=_number(doc, "patterns.cut_samples", int, minimum=2),
            grid_u=_number(doc, "patterns.grid_u", int, minimum=2),
            grid_v=_number(doc, "patterns.grid_v", int, minimum=2),
            output_dir=str(_field(doc, "output_dir")),
            threads=_number(doc, "threads", int, minimum=1),
        )

    def to_dict(self) -> Dict:
        """Configuration echo in the same schema the document was read from"""
        doc = default_document()
        doc["layout"].update(
            P=self.P, Q=self.Q, frequency_hz=self.frequency_hz, pitch_wavelengths=self.pitch_wavelengths
        )
        doc["atoms"].update(
            bounds_lo_fraction=self.bounds_lo_fraction, bounds_hi_fraction=self.bounds_hi_fraction
        )
        for pol in Polarization:
            t = self.targets[pol]
            amp = complex(t.illumination.amplitude)
            doc["illumination"][pol.value] = {
                "theta_deg": t.illumination.incidence.theta,
                "phi_deg": t.illumination.incidence.phi,
                "amplitude_re": amp.real,
                "amplitude_im": amp.imag,
            }
            doc["targets"][pol.value] = {
                "theta_deg": t.reflection.theta,
                "phi_deg": t.reflection.phi,
                "alpha": t.alpha,
            }
        doc["twin"].update(
            source=self.twin_source,
            table_path=self.table_path,
            n_train=self.n_train,
            seed=self.twin_seed,
            lut_resolution=self.lut_resolution,
        )
        doc["pso"] = {
            "swarm_size": self.swarm.swarm_size,
            "iterations": self.swarm.iterations,
            "w_start": self.swarm.w_start,
            "w_end": self.swarm.w_end,
            "c1": self.swarm.c1,
            "c2": self.swarm.c2,
            "v_max_fraction": self.swarm.v_max_fraction,
            "seed": self.swarm.seed,
            "stagnation_window": self.swarm.stagnation_window,
            "warm_start": self.warm_start,
        }
        doc["patterns"] = {"cut_samples": self.cut_samples, "grid_u": self.grid_u, "grid_v": self.grid_v}
        doc["output_dir"] = self.output_dir
        doc["threads"] = self.threads
        return doc


def training_samples(config: DesignConfig) -> List[ReflectionSample]:
    """Reflection samples feeding the twin: LHS on the synthetic atom, or a loaded table"""
    if config.twin_source == "table":
        return load_reflection_table(config.table_path, config.bounds)
    atom = SyntheticAtom(SyntheticAtomParams.for_cell(config.cell, config.bounds))
    points = lhs_sample(config.bounds, config.incidence_angles, config.n_train, config.twin_seed)
    return atom.characterize(points)


def build_twin(
    config: DesignConfig, samples: Optional[Sequence[ReflectionSample]] = None
) -> GammaTwin:
    samples = training_samples(config) if samples is None else samples
    logger.info(f"Training twin on {len(samples)} samples ({config.twin_source})")
    return train(samples, bounds=config.bounds)


def compile_luts(
    twin: GammaTwin, config: DesignConfig
) -> Dict[Polarization, GammaLUT]:
    """One LUT per illumination angle; polarizations sharing an angle share the LUT"""
    by_angle: Dict[float, GammaLUT] = {}
    luts = {}
    for pol, wave in config.waves.items():
        theta = wave.incidence.theta
        if theta not in by_angle:
            by_angle[theta] = compile_lut(twin, theta, config.lut_resolution)
        luts[pol] = by_angle[theta]
    return luts


def wrap_phase_deg(phase) -> np.ndarray:
    """Wrap to (-180, 180]"""
    wrapped = np.mod(np.asarray(phase, dtype=float) + 180.0, 360.0) - 180.0
    return np.where(wrapped == -180.0, 180.0, wrapped)


def required_phase_deg(
    target: Direction, illumination: PlaneWaveSpec, P: int, Q: int, cell: CellSpec
) -> np.ndarray:
    """Per-cell phase that adds every cell in phase at the target, (P, Q) degrees"""
    k0 = illumination.wavenumber
    uv_r = to_direction_cosines(target)
    uv_i = to_direction_cosines(illumination.incidence)
    x, y = cell_centers(P, Q, cell)
    phase = -k0 * ((uv_r.u + uv_i.u) * x[:, None] + (uv_r.v + uv_i.v) * y[None, :])
    return wrap_phase_deg(np.degrees(phase))


def phase_conjugation_design(
    target: Direction,
    illumination: PlaneWaveSpec,
    P: int,
    Q: int,
    cell: CellSpec,
    lut: GammaLUT,
    search_points: int = ORACLE_SEARCH_POINTS,
) -> EmsLayout:
    """Single-polarization oracle: match each cell's LUT phase to the steering phase"""
    pol = illumination.polarization
    bounds = lut.bounds
    required = required_phase_deg(target, illumination, P, Q, cell).ravel()
    # -180 and +180 must land on the same candidate in every cell
    required = wrap_phase_deg(np.round(required, _PHASE_DECIMALS))

    axis = np.linspace(bounds.lo, bounds.hi, search_points)
    other = np.full(search_points, bounds.mid)
    d1, d2 = (other, axis) if pol is Polarization.TE else (axis, other)
    available = np.degrees(np.angle(lut.lookup(d1, d2, pol)))

    error = np.abs(wrap_phase_deg(available[None, :] - required[:, None]))
    # equal distances go to the lowest descriptor
    choice = axis[np.argmin(np.round(error, _PHASE_DECIMALS), axis=1)]

    descriptors = np.full((P * Q, 2), bounds.mid)
    descriptors[:, 1 if pol is Polarization.TE else 0] = choice
    return EmsLayout(descriptors.reshape(P, Q, 2), cell, bounds)


def oracle_layouts(
    config: DesignConfig, luts: Dict[Polarization, GammaLUT]
) -> Dict[Polarization, EmsLayout]:
    return {
        pol: phase_conjugation_design(
            config.targets[pol].reflection,
            config.targets[pol].illumination,
            config.P,
            config.Q,
            config.cell,
            luts[pol],
        )
        for pol in Polarization
    }


def warm_start_vector(oracles: Dict[Polarization, EmsLayout]) -> np.ndarray:
    """Compromise particle: d2 from the TE oracle, d1 from the TM oracle"""
    te, tm = oracles[Polarization.TE], oracles[Polarization.TM]
    descriptors = np.stack([tm.descriptors[..., 0], te.descriptors[..., 1]], axis=-1)
    return descriptors.reshape(-1)


@dataclass
class PolarizationReport:
    gamma_map: GammaMap
    cut: FarFieldPattern
    grid: FarFieldPattern
    cut_metrics: PeakMetrics
    grid_metrics: PeakMetrics
    target_uv: UV
    target_field: float

    def to_dict(self) -> Dict:
        return {
            "target_u": self.target_uv.u,
            "target_v": self.target_uv.v,
            "target_field_magnitude": self.target_field,
            "cut": self.cut_metrics.to_dict(),
            "grid": self.grid_metrics.to_dict(),
            "gamma_magnitude_min": float(np.min(np.abs(self.gamma_map.values))),
        }


@dataclass
class LayoutReport:
    layout: EmsLayout
    polarizations: Dict[Polarization, PolarizationReport]
    cost: float

    def to_dict(self) -> Dict:
        return {
            "P": self.layout.P,
            "Q": self.layout.Q,
            "cost": self.cost,
            "polarizations": {pol.value: rep.to_dict() for pol, rep in self.polarizations.items()},
        }


def evaluate_layout(
    layout: EmsLayout,
    targets: DesignTargets,
    luts: Dict[Polarization, GammaLUT],
    cut_samples: int = PATTERN_CONFIG["cut_samples"],
    grid_u: int = PATTERN_CONFIG["grid_u"],
    grid_v: int = PATTERN_CONFIG["grid_v"],
) -> LayoutReport:
    """Full-path patterns, peak metrics and cost; each polarization under its own illumination"""
    reports = {}
    total = 0.0
    for pol in Polarization:
        target = targets[pol]
        wave = target.illumination
        gmap = gamma_map(layout, luts[pol], pol)
        cut = pattern_cut(gmap, wave, 0.0, cut_samples)
        grid = pattern_grid(gmap, wave, grid_u, grid_v)
        target_field = float(field_magnitude(far_field_at(gmap, wave, target.uv)))
        reports[pol] = PolarizationReport(
            gamma_map=gmap,
            cut=cut,
            grid=grid,
            cut_metrics=peak_metrics(cut),
            grid_metrics=peak_metrics(grid),
            target_uv=target.uv,
            target_field=target_field,
        )
        if target.alpha > 0:
            total = total + target.alpha / target_field**2 if target_field > 0 else math.inf
    return LayoutReport(layout, reports, total)


@dataclass
class SynthesisResult:
    layout: EmsLayout
    cost: float
    history: List[float]
    report: LayoutReport
    optimization: OptimizationResult
    runtime_s: float
    stage_runtimes_s: Dict[str, float]
    oracle_target_fields: Dict[Polarization, float]
    config: DesignConfig
    twin: GammaTwin
    luts: Dict[Polarization, GammaLUT]

    def to_dict(self) -> Dict:
        return {
            "cost": self.cost,
            "initial_cost": self.optimization.initial_cost,
            "cost_history": self.history,
            "iterations": self.optimization.iterations,
            "evaluations": self.optimization.evaluations,
            "stopped_early": self.optimization.stopped_early,
            "runtime_s": self.runtime_s,
            "stage_runtimes_s": self.stage_runtimes_s,
            "report": self.report.to_dict(),
            "oracle_target_field_magnitude": {
                pol.value: v for pol, v in self.oracle_target_fields.items()
            },
            "seeds": {"twin": self.config.twin_seed, "pso": self.config.swarm.seed},
            "layout": self.layout.to_dict(),
            "config": self.config.to_dict(),
        }


def synthesize(
    config: DesignConfig,
    progress: Optional[ProgressSink] = None,
    threads: Optional[int] = None,
    samples: Optional[Sequence[ReflectionSample]] = None,
) -> SynthesisResult:
    """Train the twin, compile LUTs, run the swarm over all 2*P*Q descriptors, evaluate"""
    threads = config.threads if threads is None else threads
    start = time.time()
    stages: Dict[str, float] = {}

    t0 = time.time()
    twin = build_twin(config, samples)
    stages["twin"] = time.time() - t0

    t0 = time.time()
    luts = compile_luts(twin, config)
    steering = precompute_steering(config.targets, config.P, config.Q, config.cell)
    stages["lut"] = time.time() - t0

    oracles = oracle_layouts(config, luts)
    oracle_fields = {
        pol: math.sqrt(target_powers(oracles[pol].to_vector(), luts, steering)[pol])
        for pol in config.targets.active()
    }

    n_dims = 2 * config.P * config.Q
    bounds = config.bounds
    lower = np.full(n_dims, bounds.lo)
    upper = np.full(n_dims, bounds.hi)
    initial = warm_start_vector(oracles) if config.warm_start else None
    if initial is not None:
        logger.info("Warm start: particle 0 seeded from the phase-conjugation compromise")

    t0 = time.time()
    opt = optimize(
        CostFunction(config.targets, luts, steering),
        lower,
        upper,
        config.swarm,
        progress=progress,
        threads=threads,
        initial=initial,
    )
    stages["optimization"] = time.time() - t0

    t0 = time.time()
    layout = EmsLayout.from_vector(opt.best_position, config.P, config.Q, config.cell, bounds)
    report = evaluate_layout(
        layout, config.targets, luts, config.cut_samples, config.grid_u, config.grid_v
    )
    stages["evaluation"] = time.time() - t0

    runtime = time.time() - start
    logger.info(
        f"Synthesis {config.P}x{config.Q} done in {runtime:.2f}s: cost={opt.best_cost:.6e}, "
        + ", ".join(
            f"{pol.value} peak u={rep.cut_metrics.uv_peak.u:+.4f}"
            for pol, rep in report.polarizations.items()
        )
    )
    return SynthesisResult(
        layout=layout,
        cost=opt.best_cost,
        history=opt.history,
        report=report,
        optimization=opt,
        runtime_s=runtime,
        stage_runtimes_s=stages,
        oracle_target_fields=oracle_fields,
        config=config,
        twin=twin,
        luts=luts,
    )
