"""Tile -> zone aggregation, hotspot selection and POI statistics."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from trafficlens.errors import InputValidationError
from trafficlens.gridio import PoiTable, ServiceTrafficMatrix, ZoneMap


@dataclass(frozen=True)
class ZoneSeries:
    """Hourly traffic per zone for one service and direction."""

    service: str
    direction: str
    zone_ids: tuple
    values: np.ndarray = field(repr=False)

    def totals(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def row(self, zone_id: str) -> np.ndarray:
        return self.values[self.zone_ids.index(zone_id)]


def zone_tile_matrix(zones: ZoneMap, n_tiles: int) -> scipy.sparse.csr_matrix:
    """Sparse (n_zones, n_tiles) weight matrix; rows follow ``zones.zones``."""
    zones.check_range(n_tiles)
    return scipy.sparse.csr_matrix(
        (zones.weights, (zones.zone_index(), zones.tile_ids)),
        shape=(len(zones.zones), n_tiles),
    )


def aggregate_to_zones(matrix: ServiceTrafficMatrix, zones: ZoneMap, hourly: bool = True) -> ZoneSeries:
    """Weighted sum of tile series per zone, after hourly resampling by default."""
    W = zone_tile_matrix(zones, matrix.grid.n_tiles)
    data = matrix.hourly() if hourly else np.asarray(matrix.values)
    values = np.asarray(W @ data)
    values.setflags(write=False)
    return ZoneSeries(matrix.service, matrix.direction, zones.zones, values)


def _k_for(q: float, n: int) -> int:
    # round away float noise such as 0.1 * 30 = 3.0000000000000004
    return max(1, math.ceil(round(q * n, 9)))


def top_quantile_tiles(matrix: ServiceTrafficMatrix | np.ndarray, q: float) -> np.ndarray:
    """Ids of the ``ceil(q * n_tiles)`` tiles with the highest window-total traffic.

    Ordered by descending total; ties go to the lower tile id.
    """
    if not 0.0 < q < 1.0:
        raise InputValidationError(f"quantile q={q!r} must lie in (0, 1)")
    totals = matrix.tile_totals() if isinstance(matrix, ServiceTrafficMatrix) else np.asarray(matrix, dtype=float)
    n = len(totals)
    k = _k_for(q, n)
    order = np.lexsort((np.arange(n), -totals))
    return order[:k]


def dedup_pois(pois: PoiTable) -> PoiTable:
    """Keep the first row for each place_id, preserving input order."""
    seen = set()
    keep = []
    for i, pid in enumerate(pois.place_ids):
        if pid not in seen:
            seen.add(pid)
            keep.append(i)
    return pois.take(keep)


@dataclass(frozen=True)
class PoiCategoryStat:
    category: str
    n_pois: int
    avg_traffic_per_poi: float


def poi_category_stats(hot_tiles, pois: PoiTable, matrix, min_count: int = 3):
    """Average per-POI traffic by category over the hot tiles.

    A tile's window-total traffic is split evenly over the POIs it holds; each
    category's figure is the mean of those shares over its POIs in hot tiles.
    ``matrix`` is a ServiceTrafficMatrix or a vector of tile totals.

    Returns ``(stats, empty_tiles)``: stats sorted by descending average, and the
    hot tiles that hold no POI.
    """
    totals = matrix.tile_totals() if isinstance(matrix, ServiceTrafficMatrix) else np.asarray(matrix, dtype=float)
    hot = [int(t) for t in hot_tiles]
    hot_set = set(hot)
    count = Counter(int(t) for t in pois.tile_ids.tolist() if int(t) in hot_set)
    for t in count:
        if not 0 <= t < len(totals):
            raise InputValidationError(f"tile {t} holds POIs but has no traffic row")
    shares = defaultdict(list)
    for cat, t in zip(pois.categories, pois.tile_ids.tolist()):
        if t in hot_set:
            shares[cat].append(totals[t] / count[t])
    stats = [
        PoiCategoryStat(cat, len(v), float(math.fsum(v) / len(v)))
        for cat, v in shares.items()
        if len(v) >= min_count
    ]
    stats.sort(key=lambda s: (-s.avg_traffic_per_poi, s.category))
    empty = [t for t in hot if t not in count]
    return stats, empty


def correction_weighted_totals(matrix: ServiceTrafficMatrix, zones: ZoneMap, factor_by_zone: dict) -> np.ndarray:
    """Tile totals scaled by the weighted per-zone correction factor of each tile.

    Zones absent from ``factor_by_zone`` contribute zero.
    """
    zones.check_range(matrix.grid.n_tiles)
    scale = np.zeros(matrix.grid.n_tiles)
    f = np.array([factor_by_zone.get(z, 0.0) for z in zones.zone_ids], dtype=float)
    np.add.at(scale, zones.tile_ids, zones.weights * f)
    return matrix.tile_totals() * scale
