"""Seeded synthetic traffic bundles with a planted per-zone mixture share.

Each zone's carrier traffic mixes the reference service's weekly profile
(weight ``alpha``) with the carrier's own profile (weight ``1 - alpha``), so
the estimator's output can be checked against the planted ``alpha``.

Random streams come from numpy's PCG64 seeded through ``SeedSequence``:
``[seed, 0]`` drives zone-level attributes and ``[seed, 1, j]`` drives the
traffic noise of zone ``j``. Output is therefore independent of how many
threads fill the zones.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from trafficlens.errors import InputValidationError
from trafficlens.gridio import (
    CovariateTable,
    GridGeometry,
    ServiceTrafficMatrix,
    TimeGrid,
    ZoneMap,
    fmt_float,
    write_covariates,
    write_traffic,
    write_zone_map,
)

HOURS_PER_WEEK = 168
MEAN_POPULATION = 14802.0  # mean commune size of the study area


def _bump(h: np.ndarray, center: float, width: float) -> np.ndarray:
    d = np.abs(h - center)
    d = np.minimum(d, 24 - d)  # circular in the day
    return np.exp(-0.5 * (d / width) ** 2)


def default_templates() -> dict[str, np.ndarray]:
    """Weekly (weekday x hour, Monday 00:00 first) profiles, each with mean 1.

    ``web_adult`` and ``youtube`` are smooth with an evening peak and small
    weekday bumps at 08:00 and 13:00; ``tor`` is blocky and irregular.
    """
    h = np.arange(24, dtype=float)
    weekday = np.arange(7) < 5

    def weekly(base, bumps):
        rows = [base + (bumps if wd else 0.0) for wd in weekday]
        return np.concatenate(rows)

    morning_noon = 0.18 * _bump(h, 8, 0.7) + 0.15 * _bump(h, 13, 0.7)
    adult = weekly(0.12 + 1.0 * _bump(h, 21.5, 1.8) + 0.25 * _bump(h, 15, 4.0), morning_noon)
    youtube = weekly(0.15 + 0.8 * _bump(h, 20.5, 2.2) + 0.45 * _bump(h, 15, 4.5), morning_noon)

    # fixed stream: the carrier's own profile is part of the model, not of a run
    rng = np.random.default_rng(20190316)
    blocks = rng.lognormal(0.0, 0.6, size=HOURS_PER_WEEK // 3)
    envelope = np.tile(0.35 + 0.65 * _bump(h, 0.5, 3.5), 7)
    tor = np.repeat(blocks, 3) * envelope

    out = {}
    for name, t in (("web_adult", adult), ("youtube", youtube), ("tor", tor)):
        out[name] = t / t.mean()
    return out


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic bundle; ``seed`` fixes every random draw.

    ``alpha`` gives the planted share per zone; when omitted it is drawn
    uniformly from ``alpha_range``. ``sigma`` is the log-normal multiplicative
    noise per slot, ``jitter`` scales additive Poisson(1) counts, and
    ``tile_sigma`` spreads traffic volume across the tiles of a zone.
    """

    n_zones: int = 50
    tiles_per_zone: int = 4
    n_days: int = 14
    alpha: tuple | None = None
    alpha_range: tuple = (0.0, 0.4)
    sigma: float = 0.3
    jitter: float = 0.0
    tile_sigma: float = 0.5
    volume_sigma: float = 0.3
    lag_hours: int = 0
    gt_slope: float = 10.0
    gt_noise: float = 1.0
    gt_intercept: float = 1.0
    seed: int = 0
    start: str = "2019-03-16T00:00:00"
    reference: str = "web_adult"
    carrier: str = "tor"
    control: str = "youtube"
    templates: Mapping | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.n_zones < 1 or self.tiles_per_zone < 1 or self.n_days < 1:
            raise InputValidationError("n_zones, tiles_per_zone and n_days must be >= 1")
        if self.alpha is not None:
            a = np.asarray(self.alpha, dtype=float)
            if a.shape != (self.n_zones,):
                raise InputValidationError("alpha needs one value per zone")
            if np.any(~np.isfinite(a)) or np.any((a < 0) | (a > 1)):
                raise InputValidationError("alpha values must lie in [0, 1]")
            object.__setattr__(self, "alpha", tuple(float(v) for v in a))
        lo, hi = self.alpha_range
        if not 0 <= lo <= hi <= 1:
            raise InputValidationError("alpha_range must satisfy 0 <= low <= high <= 1")
        for name in ("sigma", "jitter", "tile_sigma", "volume_sigma", "gt_noise"):
            if getattr(self, name) < 0:
                raise InputValidationError(f"{name} must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise InputValidationError("seed must be a non-negative 64-bit integer")
        if self.templates is not None:
            checked = {}
            for name, t in self.templates.items():
                t = np.asarray(t, dtype=float)
                if t.shape != (HOURS_PER_WEEK,):
                    raise InputValidationError(f"template {name!r} needs {HOURS_PER_WEEK} values")
                if np.any(~np.isfinite(t)) or np.any(t < 0):
                    raise InputValidationError(f"template {name!r} must be finite and non-negative")
                if not np.any(t > 0):
                    raise InputValidationError(f"template {name!r} is all zero")
                checked[name] = t
            object.__setattr__(self, "templates", checked)

    def resolved_templates(self) -> dict[str, np.ndarray]:
        out = default_templates()
        out = {self.reference: out["web_adult"], self.carrier: out["tor"], self.control: out["youtube"]}
        if self.templates:
            out.update(self.templates)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["templates"] = {k: v.tolist() for k, v in self.templates.items()} if self.templates else None
        d["alpha"] = list(self.alpha) if self.alpha is not None else None
        d["alpha_range"] = list(self.alpha_range)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputValidationError(f"unknown synth parameter(s): {', '.join(sorted(unknown))}")
        if d.get("alpha") is not None:
            d["alpha"] = tuple(d["alpha"])
        if "alpha_range" in d:
            d["alpha_range"] = tuple(d["alpha_range"])
        return cls(**d)


@dataclass(frozen=True)
class SynthBundle:
    spec: SynthSpec
    matrices: dict
    zone_map: ZoneMap
    covariates: CovariateTable
    alpha: np.ndarray

    @property
    def zone_ids(self) -> tuple:
        return self.covariates.zone_ids


def zone_label(j: int, n: int) -> str:
    return f"Z{j:0{max(4, len(str(n - 1)))}d}"


def generate(spec: SynthSpec, threads: int = 1) -> SynthBundle:
    """Build a bundle of reference, carrier and control DL traffic plus covariates."""
    templates = spec.resolved_templates()
    for name in (spec.reference, spec.carrier, spec.control):
        if name not in templates:
            raise InputValidationError(f"no template for service {name!r}")
    J, K = spec.n_zones, spec.tiles_per_zone
    grid = GridGeometry(0.0, 0.0, n_rows=J, n_cols=K)
    time = TimeGrid(datetime.fromisoformat(spec.start), spec.n_days * 96, 15)
    weekday, hour = time.weekday_hour()
    how = weekday * 24 + hour  # hour-of-week of each slot
    spq = time.slots_per_hour
    ref_slot = templates[spec.reference][how] / spq
    ref_lagged = templates[spec.reference][(how - spec.lag_hours) % HOURS_PER_WEEK] / spq
    own_slot = templates[spec.carrier][how] / spq
    ctl_slot = templates[spec.control][how] / spq

    g = np.random.default_rng([spec.seed, 0])
    if spec.alpha is None:
        lo, hi = spec.alpha_range
        alpha = g.uniform(lo, hi, size=J)
    else:
        g.uniform(size=J)  # keep later draws independent of how alpha was given
        alpha = np.asarray(spec.alpha, dtype=float)
    population = np.round(MEAN_POPULATION * g.lognormal(-0.5, 1.0, size=J)) + 80.0
    volume = g.lognormal(0.0, spec.volume_sigma, size=(3, J))
    gt_eps = g.standard_normal(J)
    extra = {
        "pop_density": g.lognormal(7.0, 1.0, size=J),
        "share_singles": g.uniform(0.3, 0.6, size=J),
        "poverty_rate": g.uniform(0.05, 0.3, size=J),
        "employment_rate": g.uniform(0.55, 0.75, size=J),
        "drug_abuse_rate": g.lognormal(0.0, 0.5, size=J),
    }
    groundtruth = spec.gt_intercept + spec.gt_slope * alpha + spec.gt_noise * gt_eps

    n_slots = time.n_slots
    out = {name: np.empty((J * K, n_slots)) for name in ("ref", "car", "ctl")}
    per_capita = population / 1000.0

    def noisy(rng, base, scale):
        x = np.outer(scale, base)
        if spec.sigma > 0:
            x *= np.exp(spec.sigma * rng.standard_normal(x.shape) - 0.5 * spec.sigma**2)
        if spec.jitter > 0:
            x += spec.jitter * rng.poisson(1.0, size=x.shape)
        return x

    def fill(j):
        rng = np.random.default_rng([spec.seed, 1, j])
        rows = slice(j * K, (j + 1) * K)
        tiles = rng.lognormal(0.0, spec.tile_sigma, size=(3, K))
        tiles /= tiles.sum(axis=1, keepdims=True)
        mix = alpha[j] * ref_lagged + (1.0 - alpha[j]) * own_slot
        out["ref"][rows] = noisy(rng, ref_slot, 50.0 * per_capita[j] * volume[0, j] * tiles[0])
        out["car"][rows] = noisy(rng, mix, 1.0 * per_capita[j] * volume[1, j] * tiles[1])
        out["ctl"][rows] = noisy(rng, ctl_slot, 200.0 * per_capita[j] * volume[2, j] * tiles[2])

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        list(pool.map(fill, range(J)))

    matrices = {}
    for key, service in (("ref", spec.reference), ("car", spec.carrier), ("ctl", spec.control)):
        m = ServiceTrafficMatrix(service, "DL", grid, time, out[key])
        matrices[m.key] = m

    labels = [zone_label(j, J) for j in range(J)]
    zone_map = ZoneMap(
        np.arange(J * K), tuple(labels[t // K] for t in range(J * K)), np.ones(J * K)
    )
    cols = {"population": population, **extra, "groundtruth_per_1000": groundtruth}
    covariates = CovariateTable(tuple(labels), cols)
    alpha_arr = np.array(alpha, dtype=float)
    alpha_arr.setflags(write=False)
    return SynthBundle(spec, matrices, zone_map, covariates, alpha_arr)


def write_bundle(bundle: SynthBundle, out_dir) -> dict:
    """Write the bundle in the loader formats; returns paths keyed by role."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = write_traffic(bundle.matrices.values(), out_dir)
    paths = {
        "manifest": out_dir / "manifest.json",
        "zones": out_dir / "zones.csv",
        "covariates": out_dir / "covariates.csv",
        "alpha": out_dir / "alpha.csv",
        "spec": out_dir / "synth_spec.json",
    }
    with open(paths["manifest"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    write_zone_map(bundle.zone_map, paths["zones"])
    write_covariates(bundle.covariates, paths["covariates"])
    with open(paths["alpha"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone_id", "alpha"])
        for z, a in zip(bundle.zone_ids, bundle.alpha.tolist()):
            w.writerow([z, fmt_float(a)])
    with open(paths["spec"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(bundle.spec.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths
