"""``trafficlens`` command line.

    trafficlens <synth|estimate|validate|regress|pca|hotspots|heatmap|export> --config run.json [overrides]

Exit status: 0 on success, 2 for invalid input, 3 for a numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from trafficlens import reports
from trafficlens.errors import InputValidationError, NumericError
from trafficlens.estimator import (
    DEFAULT_EPSILON,
    ESTIMATE_COLUMNS,
    EstimateRecord,
    EstimatorConfig,
    GlobalPriors,
    global_share,
    run_pipeline,
)
from trafficlens.gridio import (
    GridGeometry,
    fmt_float,
    load_manifest,
    load_table,
    load_traffic,
    load_zone_map,
)
from trafficlens.spatial import (
    correction_weighted_totals,
    dedup_pois,
    poi_category_stats,
    top_quantile_tiles,
)
from trafficlens.synthgen import SynthSpec, generate, write_bundle
from trafficlens.trends import prepare_trends

log = logging.getLogger("trafficlens")

DEFAULT_COVARIATES = (
    "log_youtube_per_1000",
    "log_web_adult_per_1000",
    "log_tor_per_1000",
    "log_pop_density",
    "share_singles",
    "poverty_rate",
    "employment_rate",
)


@dataclass
class RunConfig:
    """Everything a run needs; relative paths resolve against the config file."""

    data_dir: Path = Path("data")
    manifest: str = "manifest.json"
    zones: str = "zones.csv"
    covariates: str = "covariates.csv"
    output_dir: Path = Path("out")
    reference: str = "web_adult"
    carrier: str = "tor"
    control: str = "youtube"
    priors: GlobalPriors = field(default_factory=GlobalPriors)
    epsilon: float = DEFAULT_EPSILON
    lag_hours: int = 0
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    groundtruth: str = "groundtruth_per_1000"
    regression_covariates: tuple = DEFAULT_COVARIATES
    extra_covariates: tuple = ()
    hc_type: str = "HC1"
    exclude_zero_groundtruth: bool = False
    tables: tuple = ()  # extra zone-keyed CSVs merged into the regression frame
    trends: Path | None = None
    region_map: Path | None = None
    pca_k: int = 3
    pca_components: tuple = (1, 3)
    pois: Path | None = None
    hotspot_service: str = "tor"
    hotspot_q: float = 0.001
    hotspot_min_count: int = 3
    geometry: Path | None = None
    synth: dict = field(default_factory=dict)

    def data_path(self, name: str) -> Path:
        return Path(self.data_dir) / name

    def out_path(self, name: str) -> Path:
        return Path(self.output_dir) / name

    @property
    def services(self) -> tuple:
        return (self.control, self.reference, self.carrier)

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(self.reference, self.carrier, "DL", self.lag_hours, self.epsilon,
                               self.priors, self.threads)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputValidationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc, base=path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> "RunConfig":
        doc = dict(doc)
        cfg = cls()

        def resolve(p):
            return None if p is None else (Path(p) if Path(p).is_absolute() else base / p)

        services = doc.pop("services", {})
        for role in ("reference", "carrier", "control"):
            if role in services:
                setattr(cfg, role, str(services[role]))
        if "priors" in doc:
            pr = doc.pop("priors")
            cfg.priors = GlobalPriors(*pr) if isinstance(pr, list) else GlobalPriors(**pr)
        reg = doc.pop("regression", {})
        for key, attr in (("covariates", "regression_covariates"), ("extra_covariates", "extra_covariates"),
                          ("tables", "tables")):
            if key in reg:
                setattr(cfg, attr, tuple(reg.pop(key)))
        cfg.tables = tuple(resolve(t) for t in cfg.tables)
        for key in ("hc_type", "exclude_zero_groundtruth", "groundtruth"):
            if key in reg:
                setattr(cfg, key, reg.pop(key))
        if reg:
            raise InputValidationError(f"unknown regression option(s): {', '.join(sorted(reg))}")
        tr = doc.pop("trends", None) or {}
        if tr:
            cfg.trends = resolve(tr.get("path"))
            cfg.region_map = resolve(tr.get("region_map"))
            cfg.pca_k = int(tr.get("k", cfg.pca_k))
            cfg.pca_components = tuple(tr.get("components", cfg.pca_components))
        po = doc.pop("pois", None) or {}
        if po:
            cfg.pois = resolve(po.get("path"))
            cfg.hotspot_service = po.get("service", cfg.hotspot_service)
            cfg.hotspot_q = float(po.get("q", cfg.hotspot_q))
            cfg.hotspot_min_count = int(po.get("min_count", cfg.hotspot_min_count))
        for key in ("data_dir", "output_dir"):
            if key in doc:
                setattr(cfg, key, resolve(doc.pop(key)))
        if "geometry" in doc:
            cfg.geometry = resolve(doc.pop("geometry"))
        for key in ("manifest", "zones", "covariates", "epsilon", "lag_hours", "threads", "synth"):
            if key in doc:
                setattr(cfg, key, doc.pop(key))
        if doc:
            raise InputValidationError(f"unknown config key(s): {', '.join(sorted(doc))}")
        if cfg.threads is None:
            cfg.threads = os.cpu_count() or 1
        cfg.lag_hours = int(cfg.lag_hours)
        cfg.epsilon = float(cfg.epsilon)
        return cfg


# --------------------------------------------------------------------------
# csv helpers


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_estimates(path) -> list[EstimateRecord]:
    table = load_table(path, "covariates")
    missing = [c for c in ESTIMATE_COLUMNS[1:] if c not in table]
    if missing:
        raise InputValidationError(f"{path}: missing column(s) {', '.join(missing)}")
    return [
        EstimateRecord(z, *(float(table.columns[c][i]) for c in ESTIMATE_COLUMNS[1:]))
        for i, z in enumerate(table.zone_ids)
    ]


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_inputs(cfg: RunConfig):
    manifest = load_manifest(cfg.data_path(cfg.manifest))
    matrices = load_traffic(cfg.data_dir, manifest, threads=cfg.threads)
    zones = load_zone_map(cfg.data_path(cfg.zones))
    covariates = load_table(cfg.data_path(cfg.covariates), "covariates")
    return matrices, zones, covariates


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig, args) -> int:
    params = dict(cfg.synth)
    if args.seed is not None:
        params["seed"] = args.seed
    spec = SynthSpec.from_dict(params)
    bundle = generate(spec, threads=cfg.threads)
    paths = write_bundle(bundle, cfg.data_dir)
    print(f"wrote synthetic bundle ({spec.n_zones} zones, {spec.n_days} days) to {cfg.data_dir}")
    log.debug("bundle files: %s", paths)
    return 0


def cmd_estimate(cfg: RunConfig, args) -> int:
    matrices, zones, covariates = _load_inputs(cfg)
    result = run_pipeline(matrices, zones, covariates, cfg.estimator_config())
    out = Path(args.out) if args.out else cfg.out_path("estimates.csv")
    write_csv(out, ESTIMATE_COLUMNS, ([r.zone_id, r.rho, r.rho_prime, r.c, r.tor_dl, r.pop, r.cpc]
                                      for r in result.records))
    diag = Path(args.diagnostics) if args.diagnostics else cfg.out_path("diagnostics.csv")
    write_csv(diag, ["zone_id", "reason"], result.diagnostics)
    totals = reports.zone_totals(matrices, zones)
    services = sorted(totals)
    write_csv(cfg.out_path("zone_totals.csv"), ["zone_id", *(f"total_{s}" for s in services)],
              ([z, *(totals[s][i] for s in services)] for i, z in enumerate(zones.zones)))
    rho = result.column("rho")
    c = result.column("c")
    summary = {
        "n_zones": len(zones.zones),
        "n_estimated": len(result.records),
        "n_excluded": len(result.diagnostics),
        "n_clamped": result.n_clamped,
        "lag_hours": cfg.lag_hours,
        "epsilon": cfg.epsilon,
        "global_share": global_share(cfg.priors),
        "mean_rho": float(rho.mean()) if len(rho) else None,
        "mean_c": float(c.mean()) if len(c) else None,
    }
    _write_json(cfg.out_path("estimate_summary.json"), summary)
    print(f"estimated {summary['n_estimated']} zones ({summary['n_clamped']} clamped, "
          f"{summary['n_excluded']} excluded); mean rho {summary['mean_rho']}, mean c {summary['mean_c']}")
    return 0


def build_frame(cfg: RunConfig) -> reports.ZoneFrame:
    """Zone-level table: estimates, covariates, service totals and derived logs."""
    records = read_estimates(cfg.out_path("estimates.csv"))
    zone_ids = tuple(r.zone_id for r in records)
    frame = reports.ZoneFrame(zone_ids, {
        "rho": [r.rho for r in records],
        "c": [r.c for r in records],
        "cpc": [r.cpc for r in records],
    })
    cov = load_table(cfg.data_path(cfg.covariates), "covariates")
    frame.merge(cov.zone_ids, cov.columns)
    totals = load_table(cfg.out_path("zone_totals.csv"), "covariates")
    frame.merge(totals.zone_ids, totals.columns)
    for extra in cfg.tables:
        t = load_table(extra, "covariates")
        frame.merge(t.zone_ids, t.columns)
    if "population" not in frame:
        raise InputValidationError("covariates lack a population column")
    reports.add_derived(frame, cfg.services)
    return frame


def cmd_validate(cfg: RunConfig, args) -> int:
    frame = build_frame(cfg)
    indicators = [reports.log_indicator(s) for s in cfg.services] + [reports.CPC_INDICATOR]
    corrs, tests = reports.validation_report(frame, indicators, cfg.groundtruth)
    out = Path(args.out) if args.out else cfg.out_path("validation.csv")
    write_csv(out, ["indicator", "spearman", "p_value", "n"],
              ([c.indicator, c.spearman, c.p_value, c.n] for c in corrs))
    write_csv(cfg.out_path("dependent_tests.csv"), ["comparison", "r1", "r2", "r12", "n", "z", "p_value"],
              ([name, t.r1, t.r2, t.r12, t.n, t.z, t.p] for name, t in tests))
    for c in corrs:
        print(f"{c.indicator:28s} spearman {c.spearman:+.3f}  p {c.p_value:.3g}  n {c.n}")
    for name, t in tests:
        print(f"{name:48s} z {t.z:+.3f}  p {t.p:.3g}")
    return 0


def cmd_regress(cfg: RunConfig, args) -> int:
    frame = build_frame(cfg)
    covs = tuple(cfg.regression_covariates) + tuple(cfg.extra_covariates)
    models = reports.paired_models(frame, covs, cfg.groundtruth, cfg.hc_type, cfg.exclude_zero_groundtruth)
    for dep, res in models.items():
        write_csv(cfg.out_path(f"regression_{dep}.csv"), ["variable", "coef", "se_robust", "t", "p_value", "stars"],
                  ([n, res.coef[i], res.se_robust[i], res.t_stats[i], res.p_values[i],
                    reports.stats.significance_stars(res.p_values[i])] for i, n in enumerate(res.names)))
    write_csv(cfg.out_path("regression_summary.csv"), ["dependent", "n", "p", "r2", "adj_r2", "hc_type"],
              ([dep, r.n, r.p, r.r2, r.adj_r2, r.hc_type] for dep, r in models.items()))
    table = reports.format_regression_table(models)
    with open(cfg.out_path("regression_table.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table)
    print(table, end="")
    return 0


def cmd_pca(cfg: RunConfig, args) -> int:
    trends_path = args.trends or cfg.trends
    region_map = args.region_map or cfg.region_map
    if trends_path is None:
        raise InputValidationError("no trends table given (--trends or config trends.path)")
    table = load_table(trends_path, "trends", region_map=region_map)
    k = args.k or cfg.pca_k
    res = prepare_trends(table, k=k)
    out = Path(args.out) if args.out else cfg.out_path("pc_scores.csv")
    zones, cols = res.zone_table()
    names = list(cols)
    write_csv(out, ["zone_id", *names], ([z, *(cols[n][i] for n in names)] for i, z in enumerate(zones)))
    write_csv(out.with_name("pca_loadings.csv"), ["term", *names],
              ([t, *res.pca.loadings[i].tolist()] for i, t in enumerate(res.kept_terms)))
    write_csv(out.with_name("pca_variance.csv"), ["component", "eigenvalue", "explained_ratio"],
              ([f"PC{i + 1}", float(res.pca.eigenvalues[i]),
                float(res.pca.eigenvalues[i] / res.pca.eigenvalues.sum())] for i in range(len(res.pca.eigenvalues))))
    write_csv(out.with_name("pca_terms.csv"), ["term", "status"],
              [(t, "kept") for t in res.kept_terms] + [(t, "dropped_sparse") for t in res.dropped_terms])
    print(f"kept {len(res.kept_terms)} terms, dropped {len(res.dropped_terms)} all-zero terms; "
          f"explained variance ratio {np.round(res.pca.explained_variance_ratio, 4).tolist()}")
    return 0


def cmd_hotspots(cfg: RunConfig, args) -> int:
    service = args.service or cfg.hotspot_service
    q = args.q if args.q is not None else cfg.hotspot_q
    min_count = args.min_count if args.min_count is not None else cfg.hotspot_min_count
    pois_path = args.pois or cfg.pois
    if pois_path is None:
        raise InputValidationError("no POI table given (--pois or config pois.path)")
    manifest = load_manifest(cfg.data_path(cfg.manifest))
    matrices = load_traffic(cfg.data_dir, manifest, threads=cfg.threads)
    if (service, "DL") not in matrices:
        raise InputValidationError(f"unknown service {service!r}")
    m = matrices[(service, "DL")]
    totals = m.tile_totals()
    if args.weight_by_correction:
        zones = load_zone_map(cfg.data_path(cfg.zones))
        factors = {r.zone_id: r.c for r in read_estimates(cfg.out_path("estimates.csv"))}
        totals = correction_weighted_totals(m, zones, factors)
    pois = dedup_pois(load_table(pois_path, "pois", grid=m.grid))
    hot = top_quantile_tiles(totals, q)
    stats_, empty = poi_category_stats(hot, pois, totals, min_count=min_count)
    out = Path(args.out) if args.out else cfg.out_path("poi_stats.csv")
    write_csv(out, ["category", "n_pois", "avg_traffic_per_poi"],
              ([s.category, s.n_pois, s.avg_traffic_per_poi] for s in stats_))
    write_csv(out.with_name("hotspot_tiles.csv"), ["rank", "tile_id", "traffic", "has_poi"],
              ([i + 1, int(t), float(totals[t]), int(int(t) not in set(empty))] for i, t in enumerate(hot)))
    print(f"{len(hot)} hot tiles ({len(empty)} without POIs, {pois.n_outside} POIs off-grid); "
          f"{len(stats_)} categories with n >= {min_count}")
    return 0


def cmd_heatmap(cfg: RunConfig, args) -> int:
    manifest = load_manifest(cfg.data_path(cfg.manifest))
    matrices = load_traffic(cfg.data_dir, manifest, threads=cfg.threads)
    services = [args.service] if args.service else list(cfg.services)
    header = [f"h{h:02d}" for h in range(24)]
    for svc in services:
        if (svc, "DL") not in matrices:
            raise InputValidationError(f"unknown service {svc!r}")
        m = matrices[(svc, "DL")]
        weights = None
        suffix = ""
        if args.zones == "top10cpc":
            zones = load_zone_map(cfg.data_path(cfg.zones))
            records = sorted(read_estimates(cfg.out_path("estimates.csv")), key=lambda r: (-r.cpc, r.zone_id))
            weights = reports.top_zones_tile_weights(zones, m.grid.n_tiles, {r.zone_id: r.c for r in records[:10]})
            suffix = "_top10cpc"
        elif args.zones:
            raise InputValidationError(f"unknown zone restriction {args.zones!r}")
        cells = reports.heatmap(m, weights)
        write_csv(cfg.out_path(f"heatmap_{svc}{suffix}.csv"), header, cells.tolist())
        write_csv(cfg.out_path(f"heatmap_{svc}{suffix}_normalized.csv"), header,
                  reports.normalize_max(cells).tolist())
        print(f"heatmap {svc}{suffix}: peak at {reports.WEEKDAYS[int(cells.argmax()) // 24]} "
              f"{int(cells.argmax()) % 24:02d}:00")
    return 0


def cmd_export(cfg: RunConfig, args) -> int:
    records = read_estimates(cfg.out_path("estimates.csv"))
    zones = load_zone_map(cfg.data_path(cfg.zones))
    grid = GridGeometry.from_dict(load_manifest(cfg.data_path(cfg.manifest))["grid"])
    geometry = None
    geo_path = args.geometry or cfg.geometry
    if geo_path:
        with open(geo_path, encoding="utf-8") as fh:
            geometry = json.load(fh)
    doc = reports.export_geojson(records, zones, grid, geometry)
    out = Path(args.out) if args.out else cfg.out_path("estimates.geojson")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(doc['features'])} features to {out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "estimate": cmd_estimate,
    "validate": cmd_validate,
    "regress": cmd_regress,
    "pca": cmd_pca,
    "hotspots": cmd_hotspots,
    "heatmap": cmd_heatmap,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trafficlens", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="run configuration (JSON)")
    parser.add_argument("--data-dir")
    parser.add_argument("--out-dir")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--seed", type=int, help="synth: override the seed")
    parser.add_argument("--lag-hours", type=int)
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--priors", help="onion,porn,csam shares")
    parser.add_argument("--out", help="primary output file")
    parser.add_argument("--diagnostics", help="estimate: diagnostics CSV")
    parser.add_argument("--exclude-zero-groundtruth", action="store_true", default=None)
    parser.add_argument("--extra-covariates", help="regress: comma-separated extra covariates")
    parser.add_argument("--hc-type", choices=["HC0", "HC1"])
    parser.add_argument("--trends")
    parser.add_argument("--region-map")
    parser.add_argument("--k", type=int)
    parser.add_argument("--pois")
    parser.add_argument("--service")
    parser.add_argument("--q", type=float)
    parser.add_argument("--min-count", type=int)
    parser.add_argument("--weight-by-correction", action="store_true",
                        help="hotspots: scale tile traffic by the zone correction factor")
    parser.add_argument("--zones", help="heatmap: restrict to 'top10cpc'")
    parser.add_argument("--geometry", help="export: zone polygons (GeoJSON)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    cfg = replace(cfg)
    if args.data_dir:
        cfg.data_dir = Path(args.data_dir)
    if args.out_dir:
        cfg.output_dir = Path(args.out_dir)
    if args.threads is not None:
        if args.threads < 1:
            raise InputValidationError("--threads must be >= 1")
        cfg.threads = args.threads
    if args.lag_hours is not None:
        cfg.lag_hours = args.lag_hours
    if args.epsilon is not None:
        cfg.epsilon = args.epsilon
    if args.priors:
        cfg.priors = GlobalPriors.parse(args.priors)
    if args.exclude_zero_groundtruth:
        cfg.exclude_zero_groundtruth = True
    if args.extra_covariates:
        cfg.extra_covariates = tuple(c.strip() for c in args.extra_covariates.split(",") if c.strip())
    if args.hc_type:
        cfg.hc_type = args.hc_type
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
        cfg = apply_overrides(cfg, args)
        if not math.isfinite(cfg.epsilon) or cfg.epsilon <= 0:
            raise InputValidationError("epsilon must be positive")
        return COMMANDS[args.command](cfg, args)
    except (InputValidationError, FileNotFoundError, NotADirectoryError, json.JSONDecodeError) as exc:
        print(f"trafficlens {args.command}: input error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"trafficlens {args.command}: numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
