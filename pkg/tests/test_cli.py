import csv
import json

import numpy as np
import pytest

from trafficlens.cli import main
from trafficlens.gridio import load_table, load_traffic

SYNTH = {"n_zones": 40, "tiles_per_zone": 2, "n_days": 7, "seed": 21, "gt_slope": 20}


def _config(tmp_path, **extra):
    doc = {"data_dir": "data", "output_dir": "out", "threads": 1, "synth": SYNTH}
    doc.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return str(path)


def _run(cfg, *args):
    return main([args[0], "--config", cfg, *args[1:]])


@pytest.fixture
def estimated(tmp_path):
    cfg = _config(tmp_path)
    assert _run(cfg, "synth") == 0
    assert _run(cfg, "estimate") == 0
    return tmp_path, cfg


def test_estimate_outputs(estimated):
    tmp, _ = estimated
    with open(tmp / "out" / "estimates.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["zone_id", "rho", "rho_prime", "c", "tor_dl", "pop", "cpc"]
    assert len(rows) == 40
    summary = json.loads((tmp / "out" / "estimate_summary.json").read_text())
    assert summary["n_estimated"] == 40
    assert (tmp / "out" / "diagnostics.csv").read_text() == "zone_id,reason\n"


def test_output_csv_round_trip(estimated):
    tmp, _ = estimated
    table = load_table(tmp / "out" / "estimates.csv", "covariates")
    with open(tmp / "out" / "estimates.csv") as fh:
        rows = list(csv.DictReader(fh))
    for i, row in enumerate(rows):
        assert table.zone_ids[i] == row["zone_id"]
        for col in ("rho", "c", "cpc", "pop"):
            assert table.columns[col][i] == float(row[col])


def test_validate_and_regress(estimated, capsys):
    tmp, cfg = estimated
    assert _run(cfg, "validate") == 0
    with open(tmp / "out" / "validation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["indicator"] for r in rows] == [
        "log_youtube_per_1000", "log_web_adult_per_1000", "log_tor_per_1000", "log_cpc_per_1000"]
    assert (tmp / "out" / "dependent_tests.csv").exists()
    assert _run(cfg, "regress") == 0
    assert _run(cfg, "regress", "--extra-covariates", "drug_abuse_rate", "--hc-type", "HC0") == 0
    text = (tmp / "out" / "regression_table.txt").read_text()
    assert "drug_abuse_rate" in text and "HC0" in text


def test_heatmap_and_export(estimated):
    tmp, cfg = estimated
    assert _run(cfg, "heatmap") == 0
    assert _run(cfg, "heatmap", "--service", "tor", "--zones", "top10cpc") == 0
    for name in ("heatmap_tor.csv", "heatmap_youtube_normalized.csv", "heatmap_tor_top10cpc.csv"):
        lines = (tmp / "out" / name).read_text().splitlines()
        assert lines[0].split(",") == [f"h{h:02d}" for h in range(24)]
        assert len(lines) == 8
    norm = np.loadtxt(tmp / "out" / "heatmap_tor_normalized.csv", delimiter=",", skiprows=1)
    assert norm.max() == 1.0
    raw = np.loadtxt(tmp / "out" / "heatmap_tor.csv", delimiter=",", skiprows=1)
    m = load_traffic(tmp / "data", tmp / "data" / "manifest.json")[("tor", "DL")]
    assert raw.sum() == pytest.approx(m.total(), rel=1e-9)
    assert _run(cfg, "export") == 0
    doc = json.loads((tmp / "out" / "estimates.geojson").read_text())
    assert doc["type"] == "FeatureCollection" and len(doc["features"]) == 40
    assert _run(cfg, "heatmap", "--service", "nope") == 2


def test_hotspots(estimated):
    tmp, cfg = estimated
    pois = tmp / "pois.csv"
    rows = ["place_id,tile_id,category"]
    rng = np.random.default_rng(0)
    for i in range(300):
        rows.append(f"p{i},{rng.integers(80)},{'abc'[rng.integers(3)]}")
    rows.append("p0,1,dup")
    pois.write_text("\n".join(rows) + "\n")
    assert _run(cfg, "hotspots", "--pois", str(pois), "--q", "0.25") == 0
    with open(tmp / "out" / "poi_stats.csv") as fh:
        out = list(csv.DictReader(fh))
    assert list(out[0]) == ["category", "n_pois", "avg_traffic_per_poi"]
    assert all(int(r["n_pois"]) >= 3 for r in out)
    assert "dup" not in {r["category"] for r in out}
    avgs = [float(r["avg_traffic_per_poi"]) for r in out]
    assert avgs == sorted(avgs, reverse=True)
    assert _run(cfg, "hotspots", "--pois", str(pois), "--weight-by-correction") == 0
    assert _run(cfg, "hotspots", "--pois", str(pois), "--q", "1.5") == 2


def test_pca_command(tmp_path):
    rng = np.random.default_rng(2)
    terms = [f"term{j}" for j in range(6)]
    lines = ["region_id," + ",".join(terms)]
    for r in range(8):
        vals = rng.uniform(0, 100, 6).round(1)
        vals[4] = 0
        lines.append(f"R{r}," + ",".join(str(v) for v in vals))
    (tmp_path / "trends.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "regions.csv").write_text(
        "region_id,zone_id\n" + "".join(f"R{r},Z{r}{s}\n" for r in range(8) for s in "ab"))
    cfg = _config(tmp_path, trends={"path": "trends.csv", "region_map": "regions.csv", "k": 3})
    assert _run(cfg, "pca") == 0
    scores = load_table(tmp_path / "out" / "pc_scores.csv", "covariates")
    assert len(scores.zone_ids) == 16
    assert np.array_equal(scores.column("PC1", ["Z0a"]), scores.column("PC1", ["Z0b"]))
    status = (tmp_path / "out" / "pca_terms.csv").read_text()
    assert "term4,dropped_sparse" in status
    assert _run(cfg, "pca", "--k", "9") == 2


def test_exit_codes(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert _run(cfg, "estimate") == 2  # no data yet
    assert "input error" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["estimate", "--config", str(bad)]) == 2
    (tmp_path / "unknown.json").write_text(json.dumps({"bogus": 1}))
    assert main(["estimate", "--config", str(tmp_path / "unknown.json")]) == 2
    assert _run(cfg, "synth") == 0
    assert _run(cfg, "estimate", "--epsilon", "0") == 2
    assert _run(cfg, "estimate", "--priors", "0.1,0.2") == 2


def test_numeric_exit_code(tmp_path, capsys):
    cfg = _config(tmp_path, regression={"extra_covariates": ["const_col"], "tables": ["extra.csv"]})
    assert _run(cfg, "synth") == 0
    assert _run(cfg, "estimate") == 0
    zones = load_table(tmp_path / "data" / "covariates.csv", "covariates").zone_ids
    (tmp_path / "extra.csv").write_text("zone_id,const_col\n" + "".join(f"{z},1.0\n" for z in zones))
    assert _run(cfg, "regress") == 3
    assert "const_col" in capsys.readouterr().err


def test_lag_flag_changes_estimates(estimated):
    tmp, cfg = estimated
    first = (tmp / "out" / "estimates.csv").read_text()
    assert _run(cfg, "estimate", "--lag-hours", "2") == 0
    assert (tmp / "out" / "estimates.csv").read_text() != first
