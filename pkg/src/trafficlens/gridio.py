"""Core data model and file loaders.

Traffic arrives as per-day text files with one line per tile
(``tile_id v1 ... v96``), zone maps and covariates as CSV, and a JSON manifest
ties the day files to services, directions, grid geometry and the time axis.
Every structure built here is immutable after construction: numpy arrays are
copied and flagged read-only.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from trafficlens.errors import InputValidationError

DIRECTIONS = ("DL", "UL")
WEIGHT_TOL = 1e-9
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})
NETMOB_NAME = re.compile(r"^(\d{8})_(DL|UL)\.txt$")


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Regular time axis of ``n_slots`` slots of ``step_minutes`` each."""

    start: datetime
    n_slots: int
    step_minutes: int = 15

    def __post_init__(self):
        if self.n_slots <= 0:
            raise InputValidationError("n_slots must be positive")
        if self.step_minutes <= 0 or 1440 % self.step_minutes:
            raise InputValidationError("step_minutes must divide one day")
        minute_of_day = self.start.hour * 60 + self.start.minute
        if self.start.second or self.start.microsecond or minute_of_day % self.step_minutes:
            raise InputValidationError(
                f"start {self.start.isoformat()} is not aligned to {self.step_minutes}-minute slots"
            )

    @property
    def slots_per_day(self) -> int:
        return 1440 // self.step_minutes

    @property
    def slots_per_hour(self) -> int:
        return max(1, 60 // self.step_minutes)

    @property
    def end(self) -> datetime:
        return self.start + timedelta(minutes=self.step_minutes * self.n_slots)

    @property
    def n_hours(self) -> int:
        return self.n_slots // self.slots_per_hour

    def slot_time(self, t: int) -> datetime:
        return self.start + timedelta(minutes=self.step_minutes * int(t))

    def weekday_hour(self) -> tuple[np.ndarray, np.ndarray]:
        """Weekday (0 = Monday) and hour of day for every slot."""
        base = self.start.weekday() * 1440 + self.start.hour * 60 + self.start.minute
        minutes = base + np.arange(self.n_slots, dtype=np.int64) * self.step_minutes
        minute_of_week = minutes % (7 * 1440)
        return minute_of_week // 1440, (minute_of_week % 1440) // 60

    def hourly(self) -> "TimeGrid":
        """The hourly grid obtained by summing whole hours of this grid."""
        _check_hourly(self)
        return TimeGrid(self.start, self.n_hours, 60)


def _check_hourly(time: TimeGrid) -> None:
    if time.step_minutes > 60 or 60 % time.step_minutes:
        raise InputValidationError("hourly resampling needs a step dividing 60 minutes")
    if time.start.minute:
        raise InputValidationError("hourly resampling needs an hour-aligned start")
    if time.n_slots % time.slots_per_hour:
        raise InputValidationError("time window does not cover whole hours")


def resample_hourly(values: np.ndarray, time: TimeGrid) -> np.ndarray:
    """Sum consecutive slots into hours along the last axis."""
    _check_hourly(time)
    values = np.asarray(values, dtype=float)
    k = time.slots_per_hour
    if k == 1:
        return values.copy()
    return values.reshape(values.shape[:-1] + (time.n_hours, k)).sum(axis=-1)


@dataclass(frozen=True)
class GridGeometry:
    """Square-cell grid in a projected plane; tile ids are row-major."""

    origin_x: float
    origin_y: float
    n_rows: int
    n_cols: int
    cell_size: float = 100.0

    def __post_init__(self):
        if self.n_rows <= 0 or self.n_cols <= 0:
            raise InputValidationError("grid needs positive n_rows and n_cols")
        if not self.cell_size > 0:
            raise InputValidationError("cell_size must be positive")

    @property
    def n_tiles(self) -> int:
        return self.n_rows * self.n_cols

    def tile_id(self, row, col):
        row = np.asarray(row)
        col = np.asarray(col)
        if np.any((row < 0) | (row >= self.n_rows) | (col < 0) | (col >= self.n_cols)):
            raise InputValidationError("row/col outside the grid")
        return row * self.n_cols + col

    def rowcol(self, tile_id):
        tile_id = np.asarray(tile_id)
        if np.any((tile_id < 0) | (tile_id >= self.n_tiles)):
            raise InputValidationError("tile id outside the grid")
        return tile_id // self.n_cols, tile_id % self.n_cols

    def tile_at(self, x, y) -> np.ndarray:
        """Tile id containing each point, or -1 for points off the grid."""
        col = np.floor((np.asarray(x, dtype=float) - self.origin_x) / self.cell_size)
        row = np.floor((np.asarray(y, dtype=float) - self.origin_y) / self.cell_size)
        inside = (row >= 0) & (row < self.n_rows) & (col >= 0) & (col < self.n_cols)
        ids = np.where(inside, row * self.n_cols + col, -1)
        return ids.astype(np.int64)

    def tile_center(self, tile_id) -> tuple[np.ndarray, np.ndarray]:
        row, col = self.rowcol(tile_id)
        return (
            self.origin_x + (col + 0.5) * self.cell_size,
            self.origin_y + (row + 0.5) * self.cell_size,
        )

    def to_dict(self) -> dict:
        return {
            "origin_x": self.origin_x,
            "origin_y": self.origin_y,
            "cell_size": self.cell_size,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridGeometry":
        try:
            return cls(
                origin_x=float(d.get("origin_x", 0.0)),
                origin_y=float(d.get("origin_y", 0.0)),
                n_rows=int(d["n_rows"]),
                n_cols=int(d["n_cols"]),
                cell_size=float(d.get("cell_size", 100.0)),
            )
        except KeyError as exc:
            raise InputValidationError(f"grid definition lacks {exc.args[0]!r}") from None


@dataclass(frozen=True)
class ServiceTrafficMatrix:
    """Traffic of one service and direction, tiles x time slots."""

    service: str
    direction: str
    grid: GridGeometry
    time: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise InputValidationError(f"direction must be one of {DIRECTIONS}")
        values = _frozen(self.values)
        if values.shape != (self.grid.n_tiles, self.time.n_slots):
            raise InputValidationError(
                f"{self.service}/{self.direction}: values shape {values.shape} does not match "
                f"grid x time ({self.grid.n_tiles}, {self.time.n_slots})"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InputValidationError(f"{self.service}/{self.direction}: values must be finite and >= 0")
        object.__setattr__(self, "values", values)

    @property
    def key(self) -> tuple[str, str]:
        return self.service, self.direction

    def total(self) -> float:
        return float(self.values.sum())

    def tile_totals(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def hourly(self) -> np.ndarray:
        return resample_hourly(self.values, self.time)

    def scaled(self, factor: float) -> "ServiceTrafficMatrix":
        return ServiceTrafficMatrix(self.service, self.direction, self.grid, self.time, self.values * factor)


# --------------------------------------------------------------------------
# day files and manifests


def _parse_start(value) -> datetime:
    if isinstance(value, datetime):
        return value
    try:
        return datetime.fromisoformat(str(value))
    except ValueError:
        raise InputValidationError(f"bad start timestamp {value!r}") from None


def read_day_file(path, n_tiles: int, slots_per_day: int = 96) -> np.ndarray:
    """Parse one day file into a dense (n_tiles, slots_per_day) array."""
    out = np.zeros((n_tiles, slots_per_day))
    seen = set()
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            where = f"{path}:{lineno}"
            try:
                tile = int(parts[0])
            except ValueError:
                raise InputValidationError(f"{where}: malformed tile id {parts[0]!r}") from None
            if len(parts) - 1 != slots_per_day:
                raise InputValidationError(
                    f"{where}: slot count mismatch ({len(parts) - 1} values, expected {slots_per_day})"
                )
            try:
                row = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise InputValidationError(f"{where}: malformed value") from None
            if not np.all(np.isfinite(row)):
                raise InputValidationError(f"{where}: non-finite value")
            if np.any(row < 0):
                raise InputValidationError(f"{where}: negative value")
            if not 0 <= tile < n_tiles:
                raise InputValidationError(f"{where}: tile id {tile} outside grid of {n_tiles} tiles")
            if tile in seen:
                raise InputValidationError(f"{where}: duplicate tile id {tile}")
            seen.add(tile)
            out[tile] = row
    return out


def write_day_file(path, day_values: np.ndarray, include_zero_rows: bool = False) -> None:
    """Write a (n_tiles, slots_per_day) block; ``repr`` keeps floats round-trip exact."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for tile, row in enumerate(np.asarray(day_values, dtype=float)):
            if not include_zero_rows and not row.any():
                continue
            fh.write(str(tile) + " " + " ".join(map(repr, row.tolist())) + "\n")


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputValidationError(f"{path}: invalid JSON manifest ({exc})") from None


def load_traffic(dir_path, manifest, threads: int | None = None) -> dict[tuple[str, str], ServiceTrafficMatrix]:
    """Load every (service, direction) series listed in the manifest.

    ``manifest`` is a dict or a path to a JSON file with keys ``grid``, ``time``
    (``start``, optional ``step_minutes`` and ``n_slots``) and ``series``, a list
    of ``{service, direction, files}``. Days are concatenated in list order and
    tiles missing from a file are zero.
    """
    if not isinstance(manifest, Mapping):
        manifest = load_manifest(manifest)
    dir_path = Path(dir_path)
    try:
        grid = GridGeometry.from_dict(manifest["grid"])
        time_cfg = manifest["time"]
        series = manifest["series"]
    except KeyError as exc:
        raise InputValidationError(f"manifest lacks {exc.args[0]!r}") from None
    step = int(time_cfg.get("step_minutes", 15))
    slots_per_day = 1440 // step
    if not series:
        raise InputValidationError("manifest lists no series")
    n_files = {len(s["files"]) for s in series}
    if len(n_files) != 1 or 0 in n_files:
        raise InputValidationError("all series must list the same, non-zero number of day files")
    n_slots = n_files.pop() * slots_per_day
    if "n_slots" in time_cfg and int(time_cfg["n_slots"]) != n_slots:
        raise InputValidationError(f"manifest n_slots {time_cfg['n_slots']} != {n_slots} implied by files")
    time = TimeGrid(_parse_start(time_cfg["start"]), n_slots, step)

    jobs = []
    keys = []
    for s in series:
        key = (str(s["service"]), str(s["direction"]))
        if key in keys:
            raise InputValidationError(f"duplicate series {key}")
        keys.append(key)
        jobs.extend(dir_path / f for f in s["files"])

    with ThreadPoolExecutor(max_workers=threads or os.cpu_count()) as pool:
        days = list(pool.map(lambda p: read_day_file(p, grid.n_tiles, slots_per_day), jobs))

    out = {}
    per = len(jobs) // len(keys)
    for i, key in enumerate(keys):
        values = np.concatenate(days[i * per:(i + 1) * per], axis=1)
        out[key] = ServiceTrafficMatrix(key[0], key[1], grid, time, values)
    return out


def write_traffic(matrices: Iterable[ServiceTrafficMatrix], dir_path, layout: str = "netmob") -> dict:
    """Write matrices as day files and return the matching manifest dict.

    ``layout="netmob"`` names files ``<service>/<YYYYMMDD>_<DL|UL>.txt``.
    """
    matrices = list(matrices)
    if not matrices:
        raise InputValidationError("nothing to write")
    grid, time = matrices[0].grid, matrices[0].time
    if any(m.grid != grid or m.time != time for m in matrices):
        raise InputValidationError("matrices must share grid and time axis")
    if time.n_slots % time.slots_per_day or time.start.hour or time.start.minute:
        raise InputValidationError("day files need a midnight start and whole days")
    if layout != "netmob":
        raise InputValidationError(f"unknown layout {layout!r}")
    dir_path = Path(dir_path)
    n_days = time.n_slots // time.slots_per_day
    series = []
    for m in matrices:
        (dir_path / m.service).mkdir(parents=True, exist_ok=True)
        files = []
        for d in range(n_days):
            day = time.start + timedelta(days=d)
            rel = f"{m.service}/{day:%Y%m%d}_{m.direction}.txt"
            lo = d * time.slots_per_day
            write_day_file(dir_path / rel, m.values[:, lo:lo + time.slots_per_day])
            files.append(rel)
        series.append({"service": m.service, "direction": m.direction, "files": files})
    return {
        "grid": grid.to_dict(),
        "time": {"start": time.start.isoformat(), "step_minutes": time.step_minutes, "n_slots": time.n_slots},
        "series": series,
    }


def netmob_series(dir_path) -> tuple[datetime, list[dict]]:
    """Discover ``<service>/<YYYYMMDD>_<DL|UL>.txt`` files under ``dir_path``.

    Returns the first date and manifest ``series`` entries, files sorted by date.
    """
    dir_path = Path(dir_path)
    found: dict[tuple[str, str], list[str]] = {}
    for sub in sorted(p for p in dir_path.iterdir() if p.is_dir()):
        for f in sorted(sub.iterdir()):
            m = NETMOB_NAME.match(f.name)
            if m:
                found.setdefault((sub.name, m.group(2)), []).append(m.group(1))
    if not found:
        raise InputValidationError(f"no day files found under {dir_path}")
    dates = {tuple(v) for v in found.values()}
    if len(dates) != 1:
        raise InputValidationError("services cover different days")
    days = sorted(dates.pop())
    series = [
        {"service": svc, "direction": dr, "files": [f"{svc}/{d}_{dr}.txt" for d in days]}
        for (svc, dr) in sorted(found)
    ]
    return datetime.strptime(days[0], "%Y%m%d"), series


# --------------------------------------------------------------------------
# zone maps


@dataclass(frozen=True)
class ZoneMap:
    """Weighted assignment of tiles to zones."""

    tile_ids: np.ndarray
    zone_ids: tuple
    weights: np.ndarray

    def __post_init__(self):
        tiles = _frozen(self.tile_ids, dtype=np.int64)
        weights = _frozen(self.weights)
        zones = tuple(str(z) for z in self.zone_ids)
        if not (len(tiles) == len(zones) == len(weights)):
            raise InputValidationError("zone map columns differ in length")
        if np.any(~np.isfinite(weights)) or np.any((weights <= 0) | (weights > 1)):
            raise InputValidationError("zone weights must lie in (0, 1]")
        if np.any(tiles < 0):
            raise InputValidationError("negative tile id in zone map")
        pairs = set()
        for t, z in zip(tiles.tolist(), zones):
            if (t, z) in pairs:
                raise InputValidationError(f"duplicate (tile, zone) pair ({t}, {z})")
            pairs.add((t, z))
        if len(tiles):
            uniq, inv = np.unique(tiles, return_inverse=True)
            sums = np.bincount(inv, weights=weights)
            bad = np.abs(sums - 1.0) > WEIGHT_TOL
            if bad.any():
                t = int(uniq[np.argmax(bad)])
                raise InputValidationError(f"weights of tile {t} sum to {sums[np.argmax(bad)]!r}, not 1")
        object.__setattr__(self, "tile_ids", tiles)
        object.__setattr__(self, "zone_ids", zones)
        object.__setattr__(self, "weights", weights)

    @property
    def zones(self) -> tuple[str, ...]:
        """Sorted zone ids: the estimation universe."""
        return tuple(sorted(set(self.zone_ids)))

    def zone_index(self) -> np.ndarray:
        """Position of each entry's zone within ``zones``."""
        lookup = {z: i for i, z in enumerate(self.zones)}
        return np.array([lookup[z] for z in self.zone_ids], dtype=np.int64)

    def check_range(self, n_tiles: int) -> None:
        if len(self.tile_ids) and int(self.tile_ids.max()) >= n_tiles:
            raise InputValidationError(
                f"zone map references tile {int(self.tile_ids.max())} outside grid of {n_tiles} tiles"
            )

    def tiles_of(self, zone_id: str) -> tuple[np.ndarray, np.ndarray]:
        mask = np.array([z == zone_id for z in self.zone_ids], dtype=bool)
        return self.tile_ids[mask], self.weights[mask]


def _read_csv(path, required: Iterable[str] = ()) -> tuple[list[str], list[tuple[int, dict]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputValidationError(f"{path}: empty file, header row required")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        missing = [c for c in required if c not in header]
        if missing:
            raise InputValidationError(f"{path}: missing mandatory column(s) {', '.join(missing)}")
        rows = [(reader.line_num, row) for row in reader]
    return header, rows


def _number(text, where) -> float:
    s = (text or "").strip()
    if s.lower() in MISSING_TOKENS:
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise InputValidationError(f"{where}: unparseable numeric value {s!r}") from None


def load_zone_map(path) -> ZoneMap:
    """Read a ``tile_id,zone_id,weight`` CSV."""
    _, rows = _read_csv(path, ("tile_id", "zone_id", "weight"))
    tiles, zones, weights = [], [], []
    for line, row in rows:
        try:
            tiles.append(int(row["tile_id"]))
        except (TypeError, ValueError):
            raise InputValidationError(f"{path}:{line}: bad tile_id {row['tile_id']!r}") from None
        zone = (row["zone_id"] or "").strip()
        if not zone:
            raise InputValidationError(f"{path}:{line}: empty zone_id")
        zones.append(zone)
        weights.append(_number(row["weight"], f"{path}:{line}:weight"))
    try:
        return ZoneMap(np.array(tiles, dtype=np.int64), tuple(zones), np.array(weights))
    except InputValidationError as exc:
        raise InputValidationError(f"{path}: {exc}") from None


def write_zone_map(zone_map: ZoneMap, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tile_id", "zone_id", "weight"])
        for t, z, wt in zip(zone_map.tile_ids.tolist(), zone_map.zone_ids, zone_map.weights.tolist()):
            w.writerow([t, z, repr(wt)])


# --------------------------------------------------------------------------
# tables


@dataclass(frozen=True)
class CovariateTable:
    """Numeric zone attributes; NaN marks a missing cell."""

    zone_ids: tuple
    columns: Mapping[str, np.ndarray]

    def __post_init__(self):
        zones = tuple(str(z) for z in self.zone_ids)
        if len(set(zones)) != len(zones):
            raise InputValidationError("covariate table has duplicate zone ids")
        cols = {}
        for name, col in self.columns.items():
            col = _frozen(col)
            if col.shape != (len(zones),):
                raise InputValidationError(f"column {name!r} has wrong length")
            cols[name] = col
        object.__setattr__(self, "zone_ids", zones)
        object.__setattr__(self, "columns", cols)

    def __contains__(self, name) -> bool:
        return name in self.columns

    def column(self, name: str, zones: Iterable[str] | None = None) -> np.ndarray:
        """Values of ``name`` aligned to ``zones`` (NaN where a zone is absent)."""
        if name not in self.columns:
            raise InputValidationError(f"unknown covariate {name!r}")
        col = self.columns[name]
        if zones is None:
            return col
        pos = {z: i for i, z in enumerate(self.zone_ids)}
        return np.array([col[pos[z]] if z in pos else math.nan for z in zones])

    def missing(self, name: str) -> np.ndarray:
        return np.isnan(self.column(name))

    def invalid_population(self) -> np.ndarray:
        """Rows unusable for per-capita quantities: population missing or <= 0."""
        pop = self.column("population")
        return ~(pop > 0)


@dataclass(frozen=True)
class PoiTable:
    place_ids: tuple
    categories: tuple
    tile_ids: np.ndarray
    n_outside: int = 0

    def __post_init__(self):
        tiles = _frozen(self.tile_ids, dtype=np.int64)
        if not (len(self.place_ids) == len(self.categories) == len(tiles)):
            raise InputValidationError("POI columns differ in length")
        if any(not c for c in self.categories):
            raise InputValidationError("POI category must be non-empty")
        object.__setattr__(self, "place_ids", tuple(self.place_ids))
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "tile_ids", tiles)

    def __len__(self) -> int:
        return len(self.place_ids)

    def take(self, idx) -> "PoiTable":
        idx = list(idx)
        return PoiTable(
            tuple(self.place_ids[i] for i in idx),
            tuple(self.categories[i] for i in idx),
            self.tile_ids[idx] if idx else np.zeros(0, dtype=np.int64),
            self.n_outside,
        )


@dataclass(frozen=True)
class TrendsTable:
    """Search-term popularity per region plus the region -> zone mapping."""

    region_ids: tuple
    terms: tuple
    values: np.ndarray
    region_zones: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (len(self.region_ids), len(self.terms)):
            raise InputValidationError("trends values do not match regions x terms")
        if np.any(np.isnan(values)) or np.any((values < 0) | (values > 100)):
            raise InputValidationError("trends values must lie in [0, 100]")
        object.__setattr__(self, "region_ids", tuple(str(r) for r in self.region_ids))
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "region_zones", {str(k): tuple(v) for k, v in self.region_zones.items()})

    def sparse_terms(self) -> tuple[str, ...]:
        return tuple(t for t, col in zip(self.terms, self.values.T) if not np.any(col))


def _load_covariates(path) -> CovariateTable:
    header, rows = _read_csv(path, ("zone_id",))
    names = [h for h in header if h != "zone_id"]
    zones = []
    data = {n: [] for n in names}
    for line, row in rows:
        zone = (row["zone_id"] or "").strip()
        if not zone:
            raise InputValidationError(f"{path}:{line}: empty zone_id")
        zones.append(zone)
        for n in names:
            data[n].append(_number(row[n], f"{path}:{line}:{n}"))
    try:
        return CovariateTable(tuple(zones), {n: np.array(v, dtype=float) for n, v in data.items()})
    except InputValidationError as exc:
        raise InputValidationError(f"{path}: {exc}") from None


def _load_pois(path, grid: GridGeometry | None) -> PoiTable:
    header, rows = _read_csv(path, ("place_id", "category"))
    by_tile = "tile_id" in header
    if not by_tile and not {"x", "y"} <= set(header):
        raise InputValidationError(f"{path}: POIs need a tile_id column or x and y columns")
    if not by_tile and grid is None:
        raise InputValidationError("POI coordinates need a grid geometry to resolve tiles")
    ids, cats, tiles = [], [], []
    outside = 0
    for line, row in rows:
        where = f"{path}:{line}"
        cat = (row["category"] or "").strip()
        if not cat:
            raise InputValidationError(f"{where}: empty category")
        if by_tile:
            try:
                tile = int(row["tile_id"])
            except (TypeError, ValueError):
                raise InputValidationError(f"{where}: bad tile_id {row['tile_id']!r}") from None
            if grid is not None and not 0 <= tile < grid.n_tiles:
                tile = -1
        else:
            x = _number(row["x"], f"{where}:x")
            y = _number(row["y"], f"{where}:y")
            tile = int(grid.tile_at(x, y)) if math.isfinite(x) and math.isfinite(y) else -1
        if tile < 0:
            outside += 1
            continue
        ids.append((row["place_id"] or "").strip())
        cats.append(cat)
        tiles.append(tile)
    return PoiTable(tuple(ids), tuple(cats), np.array(tiles, dtype=np.int64), outside)


def load_region_map(path) -> dict[str, tuple[str, ...]]:
    _, rows = _read_csv(path, ("region_id", "zone_id"))
    out: dict[str, list[str]] = {}
    seen = {}
    for line, row in rows:
        region, zone = row["region_id"].strip(), row["zone_id"].strip()
        if zone in seen and seen[zone] != region:
            raise InputValidationError(f"{path}:{line}: zone {zone} assigned to two regions")
        seen[zone] = region
        out.setdefault(region, []).append(zone)
    return {r: tuple(z) for r, z in out.items()}


def _load_trends(path, region_map) -> TrendsTable:
    header, rows = _read_csv(path, ("region_id",))
    terms = [h for h in header if h != "region_id"]
    regions, values = [], []
    for line, row in rows:
        regions.append(row["region_id"].strip())
        rec = []
        for t in terms:
            v = _number(row[t], f"{path}:{line}:{t}")
            if math.isnan(v):
                raise InputValidationError(f"{path}:{line}:{t}: missing trends value")
            rec.append(v)
        values.append(rec)
    if len(set(regions)) != len(regions):
        raise InputValidationError(f"{path}: duplicate region ids")
    if region_map is not None and not isinstance(region_map, Mapping):
        region_map = load_region_map(region_map)
    try:
        return TrendsTable(
            tuple(regions), tuple(terms),
            np.array(values, dtype=float).reshape(len(regions), len(terms)),
            region_map or {},
        )
    except InputValidationError as exc:
        raise InputValidationError(f"{path}: {exc}") from None


def load_table(path, schema: str, *, grid: GridGeometry | None = None, region_map=None):
    """Load a CSV as ``"covariates"``, ``"pois"`` or ``"trends"``."""
    if schema == "covariates":
        return _load_covariates(path)
    if schema == "pois":
        return _load_pois(path, grid)
    if schema == "trends":
        return _load_trends(path, region_map)
    raise InputValidationError(f"unknown table schema {schema!r}")


def fmt_float(v) -> str:
    """Shortest round-trip text for a float; empty for missing."""
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def write_covariates(table: CovariateTable, path) -> None:
    names = list(table.columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone_id", *names])
        for i, z in enumerate(table.zone_ids):
            w.writerow([z, *(fmt_float(table.columns[n][i]) for n in names)])
