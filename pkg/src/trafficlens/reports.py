"""Report builders behind the CLI subcommands.

Each function works on in-memory data so it can be tested without files;
``trafficlens.cli`` handles reading inputs and writing the CSV/GeoJSON outputs.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from trafficlens import stats
from trafficlens.errors import InputValidationError
from trafficlens.gridio import GridGeometry, ServiceTrafficMatrix, ZoneMap
from trafficlens.spatial import zone_tile_matrix

MIN_OVERLAP = 10
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")


def log_indicator(service: str) -> str:
    return f"log_{service}_per_1000"


CPC_INDICATOR = "log_cpc_per_1000"


# --------------------------------------------------------------------------
# zone-level analysis frame


@dataclass
class ZoneFrame:
    """Named zone-level columns aligned to ``zone_ids``; NaN marks missing."""

    zone_ids: tuple
    columns: dict

    def __post_init__(self):
        self.zone_ids = tuple(self.zone_ids)
        for name, col in self.columns.items():
            col = np.asarray(col, dtype=float)
            if col.shape != (len(self.zone_ids),):
                raise InputValidationError(f"column {name!r} does not match the zone list")
            self.columns[name] = col

    def __contains__(self, name) -> bool:
        return name in self.columns

    def __getitem__(self, name) -> np.ndarray:
        if name not in self.columns:
            raise InputValidationError(f"unknown column {name!r}; available: {', '.join(sorted(self.columns))}")
        return self.columns[name]

    def merge(self, zone_ids: Sequence[str], columns: Mapping[str, np.ndarray]) -> None:
        pos = {z: i for i, z in enumerate(zone_ids)}
        for name, col in columns.items():
            col = np.asarray(col, dtype=float)
            self.columns[name] = np.array([col[pos[z]] if z in pos else math.nan for z in self.zone_ids])


def zone_totals(matrices: Mapping, zones: ZoneMap, direction: str = "DL") -> dict[str, np.ndarray]:
    """Window-total traffic per zone (ordered as ``zones.zones``) for each service."""
    out = {}
    for (service, dr), m in sorted(matrices.items()):
        if dr != direction:
            continue
        W = zone_tile_matrix(zones, m.grid.n_tiles)
        out[service] = np.asarray(W @ m.tile_totals())
    return out


def add_derived(frame: ZoneFrame, services: Sequence[str]) -> None:
    """Add ``log_<service>_per_1000`` for every service total, ``log_cpc_per_1000``
    and ``log_pop_density`` where their inputs exist."""
    pop = frame["population"]
    for svc in services:
        if f"total_{svc}" in frame:
            frame.columns[log_indicator(svc)] = stats.log_per_1000(frame[f"total_{svc}"], pop)
    if "cpc" in frame:
        cpc = frame["cpc"]
        with np.errstate(divide="ignore", invalid="ignore"):
            frame.columns[CPC_INDICATOR] = np.where(cpc > 0, np.log(np.where(cpc > 0, cpc, 1.0)), np.nan)
    if "pop_density" in frame:
        d = frame["pop_density"]
        with np.errstate(divide="ignore", invalid="ignore"):
            frame.columns["log_pop_density"] = np.where(d > 0, np.log(np.where(d > 0, d, 1.0)), np.nan)


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class IndicatorCorrelation:
    indicator: str
    spearman: float
    p_value: float
    n: int


def validation_report(frame: ZoneFrame, indicators: Sequence[str], groundtruth: str = "groundtruth_per_1000",
                      target: str = CPC_INDICATOR):
    """Spearman correlation of each indicator with ground truth, plus dependent tests.

    Uses the zones where ground truth and every indicator are present. The
    dependent-correlation test compares ``target`` with each other indicator.
    """
    gt = frame[groundtruth]
    cols = [frame[i] for i in indicators]
    ok = np.isfinite(gt)
    for c in cols:
        ok &= np.isfinite(c)
    n = int(ok.sum())
    if n < MIN_OVERLAP:
        raise InputValidationError(f"insufficient overlap: {n} zones with ground truth and all indicators")
    corrs = []
    for name, c in zip(indicators, cols):
        r, p = stats.spearman(c[ok], gt[ok])
        corrs.append(IndicatorCorrelation(name, r, p, n))
    tests = []
    if target in indicators:
        t = frame[target][ok]
        r1 = corrs[list(indicators).index(target)].spearman
        for name, c in zip(indicators, cols):
            if name == target:
                continue
            r2 = corrs[list(indicators).index(name)].spearman
            r12, _ = stats.spearman(t, c[ok])
            tests.append((f"{target} vs {name}", stats.dependent_corr_z(r1, r2, r12, n)))
    return corrs, tests


# --------------------------------------------------------------------------
# regression


@dataclass(frozen=True)
class RegressionSpec:
    dependent: str
    covariates: tuple
    hc_type: str = "HC1"
    exclude_zero: str | None = None  # column whose zero rows are dropped


def fit_regression(frame: ZoneFrame, spec: RegressionSpec) -> stats.RegressionResult:
    """Listwise-complete OLS of ``spec.dependent`` on ``spec.covariates`` plus intercept."""
    names = list(spec.covariates)
    y = frame[spec.dependent]
    X = np.column_stack([frame[c] for c in names]) if names else np.zeros((len(y), 0))
    ok = np.isfinite(y) & np.all(np.isfinite(X), axis=1)
    if spec.exclude_zero:
        ok &= frame[spec.exclude_zero] != 0
    return stats.ols_hc(X[ok], y[ok], intercept=True, hc_type=spec.hc_type, names=names)


def paired_models(frame: ZoneFrame, covariates: Sequence[str], groundtruth: str = "groundtruth_per_1000",
                  hc_type: str = "HC1", exclude_zero_groundtruth: bool = False,
                  target: str = CPC_INDICATOR) -> dict[str, stats.RegressionResult]:
    """Both directions: target on covariates + ground truth, and the reverse."""
    excl = groundtruth if exclude_zero_groundtruth else None
    covs = tuple(c for c in covariates if c not in (target, groundtruth))
    return {
        target: fit_regression(frame, RegressionSpec(target, covs + (groundtruth,), hc_type, excl)),
        groundtruth: fit_regression(frame, RegressionSpec(groundtruth, covs + (target,), hc_type, excl)),
    }


def _fmt(v: float, digits: int = 3) -> str:
    return "" if not math.isfinite(v) else f"{v:.{digits}f}"


def format_regression_table(models: Mapping[str, stats.RegressionResult], digits: int = 3) -> str:
    """Side-by-side text table: coefficient with stars, robust SE in parentheses."""
    deps = list(models)
    order = []
    for res in models.values():
        for n in res.names:
            if n != "const" and n not in order:
                order.append(n)
    order.append("const")
    label_w = max(len("Adjusted R2"), *(len(n) for n in order)) + 2
    col_w = max(14, *(len(d) + 2 for d in deps))
    lines = ["".ljust(label_w) + "".join(d.rjust(col_w) for d in deps)]
    lines.append("-" * (label_w + col_w * len(deps)))
    for name in order:
        coef, se = [], []
        for res in models.values():
            if name in res.names:
                r = res.row(name)
                coef.append(_fmt(r["coef"], digits) + stats.significance_stars(r["p"]))
                se.append(f"({_fmt(r['se'], digits)})")
            else:
                coef.append("")
                se.append("")
        lines.append(("Constant" if name == "const" else name).ljust(label_w) + "".join(c.rjust(col_w) for c in coef))
        lines.append("".ljust(label_w) + "".join(s.rjust(col_w) for s in se))
    lines.append("-" * (label_w + col_w * len(deps)))
    lines.append("Observations".ljust(label_w) + "".join(str(r.n).rjust(col_w) for r in models.values()))
    lines.append("R2".ljust(label_w) + "".join(_fmt(r.r2, 2).rjust(col_w) for r in models.values()))
    lines.append("Adjusted R2".ljust(label_w) + "".join(_fmt(r.adj_r2, 2).rjust(col_w) for r in models.values()))
    hc = sorted({r.hc_type for r in models.values()})
    lines.append(f"Note: heteroscedasticity-robust SE ({', '.join(hc)}); * p<0.1; ** p<0.05; *** p<0.01")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# heatmaps


def heatmap(matrix: ServiceTrafficMatrix, tile_weights: np.ndarray | None = None) -> np.ndarray:
    """7 x 24 sums of traffic by weekday (Monday first) and hour of day.

    ``tile_weights`` optionally scales each tile before summing (zero drops it).
    """
    if tile_weights is None:
        series = matrix.values.sum(axis=0)
    else:
        w = np.asarray(tile_weights, dtype=float)
        if w.shape != (matrix.grid.n_tiles,):
            raise InputValidationError("tile_weights must have one entry per tile")
        series = w @ matrix.values
    weekday, hour = matrix.time.weekday_hour()
    out = np.zeros((7, 24))
    np.add.at(out, (weekday, hour), series)
    return out


def normalize_max(cells: np.ndarray) -> np.ndarray:
    m = float(np.max(cells))
    return cells / m if m > 0 else np.zeros_like(cells)


def top_zones_tile_weights(zones: ZoneMap, n_tiles: int, selected: dict) -> np.ndarray:
    """Per-tile weight = sum over selected zones of map weight times zone factor."""
    zones.check_range(n_tiles)
    w = np.zeros(n_tiles)
    f = np.array([selected.get(z, 0.0) for z in zones.zone_ids], dtype=float)
    np.add.at(w, zones.tile_ids, zones.weights * f)
    return w


# --------------------------------------------------------------------------
# GeoJSON


def _polygon_ok(geom) -> bool:
    return isinstance(geom, Mapping) and geom.get("type") in ("Polygon", "MultiPolygon") and "coordinates" in geom


def export_geojson(records, zones: ZoneMap, grid: GridGeometry, geometry: Mapping | None = None) -> dict:
    """FeatureCollection with one feature per estimated zone.

    ``geometry`` is a GeoJSON FeatureCollection whose features carry
    ``properties.zone_id``; zones without a polygon fall back to the
    weight-averaged centre of their tiles. Polygons for zones that have no
    estimate are an error.
    """
    by_zone = {r.zone_id: r for r in records}
    shapes = {}
    if geometry is not None:
        if geometry.get("type") != "FeatureCollection":
            raise InputValidationError("zone geometry must be a GeoJSON FeatureCollection")
        for feat in geometry.get("features", []):
            zid = str((feat.get("properties") or {}).get("zone_id", ""))
            if not _polygon_ok(feat.get("geometry")):
                raise InputValidationError(f"zone {zid!r}: geometry must be a Polygon or MultiPolygon")
            shapes[zid] = feat["geometry"]
        orphans = sorted(set(shapes) - set(by_zone))
        if orphans:
            raise InputValidationError(f"geometry for zones without estimates: {', '.join(orphans)}")
    features = []
    for zid in sorted(by_zone):
        rec = by_zone[zid]
        if zid in shapes:
            geom = shapes[zid]
        else:
            tiles, w = zones.tiles_of(zid)
            if len(tiles) == 0:
                raise InputValidationError(f"zone {zid} has neither geometry nor tiles")
            x, y = grid.tile_center(tiles)
            geom = {"type": "Point", "coordinates": [float(np.dot(w, x) / w.sum()), float(np.dot(w, y) / w.sum())]}
        features.append({
            "type": "Feature",
            "geometry": geom,
            "properties": {"zone_id": zid, "cpc": rec.cpc, "rho": rec.rho, "c": rec.c},
        })
    return {"type": "FeatureCollection", "features": features}
