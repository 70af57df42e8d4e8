# surrogate.py - Ordinary Kriging digital twin of the meta-atom reflection response
import json
import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from atoms import AtomBounds, AtomDescriptor, ReflectionSample
from config import TWIN_CONFIG
from kernels import bilinear_lookup
from wavegeom import Polarization

logger = logging.getLogger(__name__)

CHANNELS = [(pol, part) for pol in Polarization for part in ("re", "im")]
_PREDICT_CHUNK = 4096


class TwinTrainingError(ValueError):
    """Training set unusable for Kriging (duplicates, non-finite data, too few points)"""


class TwinQueryError(ValueError):
    """Twin queried outside its training box"""


def theta_grid(
    points: int = TWIN_CONFIG["theta_grid_points"],
    log10_min: float = TWIN_CONFIG["theta_log10_min"],
    log10_max: float = TWIN_CONFIG["theta_log10_max"],
) -> np.ndarray:
    return np.logspace(log10_min, log10_max, points)


def _squared_differences(xn: np.ndarray) -> np.ndarray:
    return (xn[:, None, :] - xn[None, :, :]) ** 2


def _concentrated_fit(sq_diff: np.ndarray, y: np.ndarray, theta: np.ndarray, nugget: float):
    """Concentrated log-likelihood and solve products for one hyperparameter vector"""
    n = y.shape[0]
    R = np.exp(-np.tensordot(sq_diff, theta, axes=([2], [0])))
    R[np.diag_indices(n)] += nugget
    try:
        factor = cho_factor(R, lower=True, check_finite=False)
    except LinAlgError:
        return None

    ones = np.ones(n)
    r_inv_y = cho_solve(factor, y, check_finite=False)
    r_inv_1 = cho_solve(factor, ones, check_finite=False)
    mu = float(ones @ r_inv_y) / float(ones @ r_inv_1)
    weights = r_inv_y - mu * r_inv_1
    sigma2 = float((y - mu) @ weights) / n
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    if not (np.all(np.isfinite(weights)) and math.isfinite(log_det)):
        return None
    if sigma2 > 0:
        log_likelihood = -0.5 * (n * math.log(sigma2) + log_det)
    else:
        log_likelihood = -math.inf
    return log_likelihood, mu, weights


class KrigingModel:
    """Single real-valued Ordinary Kriging channel with Gaussian correlation"""

    def __init__(
        self,
        x: np.ndarray,
        y: np.ndarray,
        theta: np.ndarray,
        nugget: float,
        offset: np.ndarray,
        scale: np.ndarray,
    ):
        self.x = np.array(x, dtype=float)
        self.y = np.array(y, dtype=float)
        self.theta = np.array(theta, dtype=float)
        self.nugget = float(nugget)
        self.offset = np.array(offset, dtype=float)
        self.scale = np.array(scale, dtype=float)
        self.xn = self.normalize(self.x)

        if np.ptp(self.y) == 0:
            # constant data: the unbiased predictor is the constant itself
            self.log_likelihood = -math.inf
            self.mu = float(self.y[0])
            self.weights = np.zeros_like(self.y)
            return

        fit = _concentrated_fit(_squared_differences(self.xn), self.y, self.theta, self.nugget)
        if fit is None:
            raise TwinTrainingError(
                f"correlation matrix is not positive definite for theta={self.theta.tolist()}"
            )
        self.log_likelihood, self.mu, self.weights = fit

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.offset) / self.scale

    @classmethod
    def fit(
        cls,
        x: np.ndarray,
        y: np.ndarray,
        nugget: float = TWIN_CONFIG["nugget"],
        grid: Optional[np.ndarray] = None,
        sweeps: int = TWIN_CONFIG["sweeps"],
        offset: Optional[np.ndarray] = None,
        scale: Optional[np.ndarray] = None,
    ) -> "KrigingModel":
        """Pick per-dimension theta by coordinate search on the concentrated likelihood"""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        grid = theta_grid() if grid is None else np.asarray(grid, dtype=float)
        if offset is None or scale is None:
            offset, scale = unit_cube_normalizers(x)

        xn = (x - offset) / scale
        n_dims = x.shape[1]
        theta = np.ones(n_dims)
        free_dims = [l for l in range(n_dims) if np.ptp(xn[:, l]) > 0]

        # constant outputs carry no information about correlation lengths
        if np.ptp(y) > 0:
            sq_diff = _squared_differences(xn)
            best = _concentrated_fit(sq_diff, y, theta, nugget)
            best_ll = best[0] if best is not None else -math.inf
            for _ in range(sweeps):
                for l in free_dims:
                    for value in grid:
                        trial = theta.copy()
                        trial[l] = value
                        fit = _concentrated_fit(sq_diff, y, trial, nugget)
                        if fit is not None and fit[0] > best_ll:
                            best_ll = fit[0]
                            theta = trial

        return cls(x, y, theta, nugget, offset, scale)

    def predict(self, x: np.ndarray) -> np.ndarray:
        xn = self.normalize(np.atleast_2d(x))
        out = np.empty(xn.shape[0])
        for start in range(0, xn.shape[0], _PREDICT_CHUNK):
            chunk = xn[start : start + _PREDICT_CHUNK]
            sq = (chunk[:, None, :] - self.xn[None, :, :]) ** 2
            r = np.exp(-np.tensordot(sq, self.theta, axes=([2], [0])))
            out[start : start + _PREDICT_CHUNK] = self.mu + r @ self.weights
        return out

    def to_dict(self) -> Dict:
        return {
            "theta": self.theta.tolist(),
            "nugget": self.nugget,
            "outputs": self.y.tolist(),
        }


def unit_cube_normalizers(x: np.ndarray):
    offset = np.min(x, axis=0)
    scale = np.ptp(x, axis=0)
    # zero-spread dimensions (e.g. a single incidence angle) keep unit scale
    scale = np.where(scale > 0, scale, 1.0)
    return offset, scale


def _sample_arrays(samples: Sequence[ReflectionSample]):
    x = np.array([[s.descriptor.d1, s.descriptor.d2, s.theta_inc] for s in samples], dtype=float)
    outputs = {
        (Polarization.TE, "re"): np.array([s.gamma_te.real for s in samples]),
        (Polarization.TE, "im"): np.array([s.gamma_te.imag for s in samples]),
        (Polarization.TM, "re"): np.array([s.gamma_tm.real for s in samples]),
        (Polarization.TM, "im"): np.array([s.gamma_tm.imag for s in samples]),
    }
    return x, outputs


def _clamp_passive(gamma: np.ndarray) -> np.ndarray:
    mag = np.abs(gamma)
    return np.where(mag > 1.0, gamma / np.where(mag > 0, mag, 1.0), gamma)


class GammaTwin:
    """Four Kriging channels {Re, Im} x {TE, TM} over (d1, d2, theta_inc)"""

    def __init__(self, channels: Dict, bounds: AtomBounds, theta_range):
        self.channels = channels
        self.bounds = bounds
        self.theta_range = (float(theta_range[0]), float(theta_range[1]))

    @property
    def n_train(self) -> int:
        return self.channels[CHANNELS[0]].x.shape[0]

    def _check_query(self, d1, d2, theta_inc) -> None:
        if not (self.bounds.contains(d1) and self.bounds.contains(d2)):
            raise TwinQueryError(
                f"descriptor query outside the training box [{self.bounds.lo:.6e}, {self.bounds.hi:.6e}] m"
            )
        lo, hi = self.theta_range
        if not lo - 1e-9 <= theta_inc <= hi + 1e-9:
            raise TwinQueryError(
                f"incidence angle {theta_inc} deg outside trained range [{lo}, {hi}]"
            )

    def evaluate(self, d1, d2, theta_inc: float, pol: Polarization) -> np.ndarray:
        """Vectorized prediction, clamped to |Gamma| <= 1 with phase preserved"""
        d1 = np.asarray(d1, dtype=float)
        d2 = np.asarray(d2, dtype=float)
        self._check_query(d1, d2, theta_inc)
        pol = Polarization(pol)
        shape = np.broadcast(d1, d2).shape
        x = np.column_stack(
            [
                np.broadcast_to(d1, shape).ravel(),
                np.broadcast_to(d2, shape).ravel(),
                np.full(int(np.prod(shape)), float(theta_inc)),
            ]
        )
        re = self.channels[(pol, "re")].predict(x)
        im = self.channels[(pol, "im")].predict(x)
        return _clamp_passive(re + 1j * im).reshape(shape)

    def to_dict(self) -> Dict:
        first = self.channels[CHANNELS[0]]
        return {
            "kind": "ordinary_kriging_gamma_twin",
            "inputs": ["d1_m", "d2_m", "theta_inc_deg"],
            "offset": first.offset.tolist(),
            "scale": first.scale.tolist(),
            "bounds": {"lo": self.bounds.lo, "hi": self.bounds.hi},
            "theta_range": list(self.theta_range),
            "training_inputs": first.x.tolist(),
            "channels": {
                f"{pol.value}_{part}": self.channels[(pol, part)].to_dict()
                for pol, part in CHANNELS
            },
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "GammaTwin":
        x = np.array(data["training_inputs"], dtype=float)
        offset = np.array(data["offset"], dtype=float)
        scale = np.array(data["scale"], dtype=float)
        channels = {}
        for pol, part in CHANNELS:
            ch = data["channels"][f"{pol.value}_{part}"]
            channels[(pol, part)] = KrigingModel(
                x, np.array(ch["outputs"]), np.array(ch["theta"]), ch["nugget"], offset, scale
            )
        bounds = AtomBounds(data["bounds"]["lo"], data["bounds"]["hi"])
        return cls(channels, bounds, data["theta_range"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        logger.info(f"Twin saved to {path}")

    @classmethod
    def load(cls, path) -> "GammaTwin":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def train(
    samples: Sequence[ReflectionSample],
    bounds: Optional[AtomBounds] = None,
    nugget: float = TWIN_CONFIG["nugget"],
    grid: Optional[np.ndarray] = None,
    sweeps: int = TWIN_CONFIG["sweeps"],
) -> GammaTwin:
    """Fit the four Kriging channels on a shared training set"""
    if len(samples) < 8:
        raise TwinTrainingError(f"need at least 8 training samples, got {len(samples)}")

    x, outputs = _sample_arrays(samples)
    for (pol, part), y in outputs.items():
        if not np.all(np.isfinite(y)):
            raise TwinTrainingError(f"non-finite {part}(Gamma_{pol.value}) in training outputs")

    offset, scale = unit_cube_normalizers(x)
    xn = (x - offset) / scale
    if np.unique(np.round(xn, 12), axis=0).shape[0] < xn.shape[0]:
        raise TwinTrainingError("duplicate training inputs after normalization")

    if bounds is None:
        d = x[:, :2]
        bounds = AtomBounds(float(d.min()), float(d.max()))
    elif not (bounds.contains(x[:, 0]) and bounds.contains(x[:, 1])):
        raise TwinTrainingError("training descriptors fall outside the declared bounds")

    start = time.time()
    channels = {}
    for key in CHANNELS:
        channels[key] = KrigingModel.fit(
            x, outputs[key], nugget=nugget, grid=grid, sweeps=sweeps, offset=offset, scale=scale
        )
        logger.debug(
            f"Channel {key[0].value}/{key[1]}: theta={channels[key].theta.tolist()}, "
            f"mu={channels[key].mu:.4f}"
        )

    theta_range = (float(x[:, 2].min()), float(x[:, 2].max()))
    logger.info(
        f"Twin trained on {len(samples)} samples in {time.time() - start:.2f}s "
        f"(theta_inc range {theta_range})"
    )
    return GammaTwin(channels, bounds, theta_range)


def predict(twin: GammaTwin, d: AtomDescriptor, theta_inc: float, pol: Polarization) -> complex:
    return complex(twin.evaluate(np.array([d.d1]), np.array([d.d2]), theta_inc, pol)[0])


@dataclass
class GammaLUT:
    """Dense Gamma tables on a uniform (d1, d2) grid for one incidence angle"""

    theta_inc: float
    lo: float
    hi: float
    resolution: int
    values: Dict[Polarization, np.ndarray]  # complex (resolution, resolution), axis 0 = d1

    @property
    def bounds(self) -> AtomBounds:
        return AtomBounds(self.lo, self.hi)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.resolution)

    def lookup(self, d1, d2, pol: Polarization) -> np.ndarray:
        d1 = np.ascontiguousarray(d1, dtype=float)
        d2 = np.ascontiguousarray(d2, dtype=float)
        if not (self.bounds.contains(d1) and self.bounds.contains(d2)):
            raise TwinQueryError("LUT lookup outside its descriptor bounds")
        shape = d1.shape
        out = bilinear_lookup(
            self.values[Polarization(pol)], self.lo, self.hi, d1.ravel(), d2.ravel()
        )
        return out.reshape(shape)

    def evaluate(self, d1, d2, theta_inc: float, pol: Polarization) -> np.ndarray:
        if abs(theta_inc - self.theta_inc) > 1e-9:
            raise TwinQueryError(
                f"LUT compiled for theta_inc={self.theta_inc}, queried at {theta_inc}"
            )
        return self.lookup(d1, d2, pol)

    def to_dict(self) -> Dict:
        return {
            "kind": "gamma_lut",
            "theta_inc_deg": self.theta_inc,
            "lo": self.lo,
            "hi": self.hi,
            "resolution": self.resolution,
            "values": {
                pol.value: {"re": arr.real.tolist(), "im": arr.imag.tolist()}
                for pol, arr in self.values.items()
            },
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "GammaLUT":
        values = {
            Polarization(key): np.array(v["re"]) + 1j * np.array(v["im"])
            for key, v in data["values"].items()
        }
        return cls(
            theta_inc=data["theta_inc_deg"],
            lo=data["lo"],
            hi=data["hi"],
            resolution=data["resolution"],
            values=values,
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "GammaLUT":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def compile_lut(
    twin: GammaTwin, theta_inc: float, resolution: int = TWIN_CONFIG["lut_resolution"]
) -> GammaLUT:
    if resolution < 16:
        raise ValueError(f"LUT resolution must be >= 16, got {resolution}")
    nodes = np.linspace(twin.bounds.lo, twin.bounds.hi, resolution)
    d1, d2 = np.meshgrid(nodes, nodes, indexing="ij")
    values = {pol: twin.evaluate(d1, d2, theta_inc, pol) for pol in Polarization}
    logger.info(f"Compiled {resolution}x{resolution} LUT at theta_inc={theta_inc} deg")
    return GammaLUT(
        theta_inc=float(theta_inc),
        lo=twin.bounds.lo,
        hi=twin.bounds.hi,
        resolution=resolution,
        values=values,
    )


def lut_lookup(lut: GammaLUT, d: AtomDescriptor) -> Dict[Polarization, complex]:
    return {pol: complex(lut.lookup(np.array([d.d1]), np.array([d.d2]), pol)[0]) for pol in Polarization}


def _wrapped_deg(a: np.ndarray) -> np.ndarray:
    return (a + 180.0) % 360.0 - 180.0


def cross_validate(
    samples: Sequence[ReflectionSample],
    folds: int = TWIN_CONFIG["cv_folds"],
    seed: int = TWIN_CONFIG["seed"],
    **train_kwargs,
) -> Dict:
    """k-fold cross validation of the twin; folds fixed by the seed"""
    if folds < 2:
        raise ValueError(f"cross validation needs at least 2 folds, got {folds}")
    samples = list(samples)
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % folds

    x_all, _ = _sample_arrays(samples)
    bounds = AtomBounds(float(x_all[:, :2].min()), float(x_all[:, :2].max()))

    truth = {pol: np.empty(n, dtype=complex) for pol in Polarization}
    pred = {pol: np.empty(n, dtype=complex) for pol in Polarization}
    for k in range(folds):
        test_idx = np.flatnonzero(fold_of == k)
        train_set = [samples[i] for i in np.flatnonzero(fold_of != k)]
        twin = train(train_set, bounds=bounds, **train_kwargs)
        lo, hi = twin.theta_range
        for i in test_idx:
            s = samples[i]
            # held-out incidence angles outside the fold's range cannot be queried
            theta = min(max(s.theta_inc, lo), hi)
            for pol in Polarization:
                truth[pol][i] = s.gamma(pol)
                pred[pol][i] = predict(twin, s.descriptor, theta, pol)

    report = {"folds": folds, "seed": seed, "n_samples": n, "rmse": {}}
    for pol in Polarization:
        err = pred[pol] - truth[pol]
        report["rmse"][f"{pol.value}_re"] = float(np.sqrt(np.mean(err.real**2)))
        report["rmse"][f"{pol.value}_im"] = float(np.sqrt(np.mean(err.imag**2)))
        dphase = _wrapped_deg(np.degrees(np.angle(pred[pol]) - np.angle(truth[pol])))
        report[f"{pol.value}_phase_rmse_deg"] = float(np.sqrt(np.mean(dphase**2)))
        dmag = np.abs(pred[pol]) - np.abs(truth[pol])
        report[f"{pol.value}_magnitude_rmse"] = float(np.sqrt(np.mean(dmag**2)))
    report["phase_rmse_deg"] = max(report["TE_phase_rmse_deg"], report["TM_phase_rmse_deg"])
    report["magnitude_rmse"] = max(report["TE_magnitude_rmse"], report["TM_magnitude_rmse"])
    return report
