"""Per-zone estimate of the target-content share of carrier download traffic.

For every zone the hourly carrier series is correlated with the hourly
reference series. Non-positive correlations are replaced by a small epsilon,
the result is scaled by literature priors into a correction factor ``c``, and
``cpc = c * carrier_total / population * 1000``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from trafficlens import stats
from trafficlens.errors import InputValidationError
from trafficlens.gridio import CovariateTable, ServiceTrafficMatrix, ZoneMap
from trafficlens.spatial import aggregate_to_zones

DEFAULT_EPSILON = 1e-4


@dataclass(frozen=True)
class GlobalPriors:
    """Literature fractions composing the global target share of carrier traffic.

    onion_share: fraction of carrier traffic going to hidden services.
    porn_share_global: fraction of hidden services in the reference category.
    csam_share: fraction of that category that is target content.
    """

    onion_share: float = 0.011
    porn_share_global: float = 0.417
    csam_share: float = 0.415

    def __post_init__(self):
        for name in ("onion_share", "porn_share_global", "csam_share"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputValidationError(f"prior {name}={v!r} must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "GlobalPriors":
        """From ``"onion,porn,csam"``."""
        try:
            a, b, c = (float(p) for p in text.split(","))
        except ValueError:
            raise InputValidationError(f"priors must be three comma-separated numbers, got {text!r}") from None
        return cls(a, b, c)

    @property
    def max_correction(self) -> float:
        return self.onion_share * self.csam_share


def global_share(priors: GlobalPriors = GlobalPriors()) -> float:
    return priors.onion_share * priors.porn_share_global * priors.csam_share


def clamp_rho(rho, epsilon: float = DEFAULT_EPSILON):
    """Keep positive correlations; replace the rest (zero included) by ``epsilon``."""
    if not epsilon > 0:
        raise InputValidationError("epsilon must be positive")
    rho = np.asarray(rho, dtype=float)
    out = np.where(rho > 0, rho, epsilon)
    out = np.where(np.isnan(rho), np.nan, out)
    return float(out) if out.ndim == 0 else out


def correction_factor(rho_prime, priors: GlobalPriors = GlobalPriors()):
    out = priors.onion_share * priors.csam_share * np.asarray(rho_prime, dtype=float)
    return float(out) if out.ndim == 0 else out


def cpc(c, tor_dl, pop):
    """Consumption estimate per 1000 inhabitants."""
    pop_arr = np.asarray(pop, dtype=float)
    if np.any(~(pop_arr > 0)):
        raise InputValidationError("invalid population: must be > 0")
    tor = np.asarray(tor_dl, dtype=float)
    if np.any(tor < 0):
        raise InputValidationError("carrier traffic must be >= 0")
    out = np.asarray(c, dtype=float) * tor / pop_arr * 1000.0
    return float(out) if out.ndim == 0 else out


def align_lag(ref: np.ndarray, carrier: np.ndarray, lag_hours: int) -> tuple[np.ndarray, np.ndarray]:
    """Pair ``carrier[t]`` with ``ref[t - lag]`` over the overlapping window (last axis).

    A positive lag means the carrier trails the reference by ``lag`` hours.
    The window is truncated, never wrapped.
    """
    n = ref.shape[-1]
    if carrier.shape[-1] != n:
        raise InputValidationError("reference and carrier series differ in length")
    L = int(lag_hours)
    if abs(L) >= n:
        raise InputValidationError(f"lag {L} leaves no overlap for series of length {n}")
    if L > 0:
        return ref[..., : n - L], carrier[..., L:]
    if L < 0:
        return ref[..., -L:], carrier[..., : n + L]
    return ref, carrier


def zone_correlation(ref_series, carrier_series, lag_hours: int = 0) -> np.ndarray:
    """Pearson correlation per zone of ``carrier(t)`` against ``ref(t - lag_hours)``.

    Accepts 1-d series or (zones, hours) arrays. Zero-variance zones give NaN.
    """
    ref = np.asarray(ref_series, dtype=float)
    car = np.asarray(carrier_series, dtype=float)
    single = ref.ndim == 1
    if single:
        ref, car = ref[None, :], car[None, :]
    if ref.shape != car.shape:
        raise InputValidationError("reference and carrier series differ in shape")
    r, c = align_lag(ref, car, lag_hours)
    if r.shape[-1] < 3:
        raise InputValidationError("need at least 3 hourly points after lag alignment")
    rho = stats.pearson_rows(r, c)
    return rho[0] if single else rho


@dataclass(frozen=True)
class EstimateRecord:
    zone_id: str
    rho: float
    rho_prime: float
    c: float
    tor_dl: float
    pop: float
    cpc: float


ESTIMATE_COLUMNS = ("zone_id", "rho", "rho_prime", "c", "tor_dl", "pop", "cpc")


@dataclass(frozen=True)
class EstimatorConfig:
    reference: str = "web_adult"
    carrier: str = "tor"
    direction: str = "DL"
    lag_hours: int = 0
    epsilon: float = DEFAULT_EPSILON
    priors: GlobalPriors = field(default_factory=GlobalPriors)
    threads: int = 1


@dataclass(frozen=True)
class PipelineResult:
    records: tuple
    diagnostics: tuple  # (zone_id, reason)
    n_clamped: int

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def zone_ids(self) -> tuple:
        return tuple(r.zone_id for r in self.records)

    def by_zone(self) -> dict:
        return {r.zone_id: r for r in self.records}


def estimates_from_rho(zone_ids, rho, tor_dl, pop, priors: GlobalPriors = GlobalPriors(),
                       epsilon: float = DEFAULT_EPSILON) -> list[EstimateRecord]:
    """Clamp, correction factor and cpc for precomputed correlations."""
    rho = np.asarray(rho, dtype=float)
    rp = clamp_rho(rho, epsilon)
    c = correction_factor(rp, priors)
    v = cpc(c, tor_dl, pop)
    tor_dl = np.broadcast_to(np.asarray(tor_dl, dtype=float), rho.shape)
    pop = np.broadcast_to(np.asarray(pop, dtype=float), rho.shape)
    return [
        EstimateRecord(str(z), float(a), float(b), float(cc), float(t), float(p), float(x))
        for z, a, b, cc, t, p, x in zip(zone_ids, rho, np.atleast_1d(rp), np.atleast_1d(c),
                                        tor_dl, pop, np.atleast_1d(v))
    ]


def _chunks(n: int, parts: int) -> list[slice]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_pipeline(matrices: Mapping, zones: ZoneMap, covariates: CovariateTable,
                 config: EstimatorConfig = EstimatorConfig()) -> PipelineResult:
    """Estimate every zone of ``zones``.

    ``matrices`` maps ``(service, direction)`` to ServiceTrafficMatrix. Zones
    with missing or non-positive population, or with a zero-variance series,
    are left out and reported in ``diagnostics``.
    """
    ref_key = (config.reference, config.direction)
    car_key = (config.carrier, config.direction)
    for key in (ref_key, car_key):
        if key not in matrices:
            raise InputValidationError(f"traffic for {key[0]}/{key[1]} not loaded")
    ref_m: ServiceTrafficMatrix = matrices[ref_key]
    car_m: ServiceTrafficMatrix = matrices[car_key]
    if ref_m.grid != car_m.grid or ref_m.time != car_m.time:
        raise InputValidationError("reference and carrier matrices differ in grid or time axis")
    zone_ids = zones.zones
    if not zone_ids:
        raise InputValidationError("empty zone universe")

    ref = aggregate_to_zones(ref_m, zones).values
    car = aggregate_to_zones(car_m, zones).values
    tor_dl = car.sum(axis=1)

    with ThreadPoolExecutor(max_workers=max(1, config.threads)) as pool:
        parts = list(pool.map(
            lambda s: zone_correlation(ref[s], car[s], config.lag_hours),
            _chunks(len(zone_ids), config.threads),
        ))
    rho = np.concatenate(parts)

    pop = covariates.column("population", zone_ids) if "population" in covariates else np.full(len(zone_ids), np.nan)

    diagnostics = []
    keep = []
    for i, z in enumerate(zone_ids):
        if not pop[i] > 0:
            diagnostics.append((z, "missing population" if math.isnan(pop[i]) else "non-positive population"))
        elif math.isnan(rho[i]):
            diagnostics.append((z, "zero-variance series"))
        else:
            keep.append(i)
    keep = np.array(keep, dtype=int)
    records = estimates_from_rho(
        [zone_ids[i] for i in keep], rho[keep], tor_dl[keep], pop[keep], config.priors, config.epsilon
    ) if len(keep) else []
    n_clamped = int(np.sum(~(rho[keep] > 0))) if len(keep) else 0
    return PipelineResult(tuple(records), tuple(diagnostics), n_clamped)
