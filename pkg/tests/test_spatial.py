import math
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_aggregate
from trafficlens.errors import InputValidationError
from trafficlens.gridio import GridGeometry, PoiTable, ServiceTrafficMatrix, TimeGrid, ZoneMap
from trafficlens.spatial import (
    PoiCategoryStat,
    aggregate_to_zones,
    dedup_pois,
    poi_category_stats,
    top_quantile_tiles,
)

START = datetime(2019, 3, 18)


def _matrix(values, n_cols=None):
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    grid = GridGeometry(0, 0, 1, n_cols or n)
    return ServiceTrafficMatrix("tor", "DL", grid, TimeGrid(START, values.shape[1]), values)


def test_single_tile_identity(rng):
    m = _matrix(rng.random((1, 8)))
    zs = aggregate_to_zones(m, ZoneMap([0], ("A",), [1.0]))
    np.testing.assert_array_equal(zs.row("A"), m.hourly()[0])
    zs = aggregate_to_zones(m, ZoneMap([0], ("A",), [1.0]), hourly=False)
    np.testing.assert_array_equal(zs.row("A"), m.values[0])


def test_half_split(rng):
    m = _matrix(rng.random((1, 8)))
    zs = aggregate_to_zones(m, ZoneMap([0, 0], ("A", "B"), [0.5, 0.5]))
    np.testing.assert_allclose(zs.row("A"), 0.5 * m.hourly()[0], rtol=1e-15)
    np.testing.assert_array_equal(zs.row("A"), zs.row("B"))
    assert zs.values.sum() == pytest.approx(m.total(), rel=1e-12)


def test_random_against_naive(rng):
    m = _matrix(rng.random((10, 16)) * 100)
    tiles, zones, weights = [], [], []
    for t in range(10):
        k = rng.integers(1, 4)
        zs = rng.choice(3, size=k, replace=False)
        w = rng.dirichlet(np.ones(k))
        for z, wi in zip(zs, w):
            tiles.append(t)
            zones.append("ABC"[z])
            weights.append(wi)
    zm = ZoneMap(tiles, tuple(zones), weights)
    got = aggregate_to_zones(m, zm, hourly=False).values
    want = naive_aggregate(m.values, [(t, "ABC".index(z), w) for t, z, w in zip(tiles, zones, weights)], 3)
    np.testing.assert_allclose(got, want, rtol=1e-9)
    assert got.sum() == pytest.approx(m.total(), rel=1e-9)


def test_out_of_range_tile():
    m = _matrix(np.ones((2, 4)))
    with pytest.raises(InputValidationError):
        aggregate_to_zones(m, ZoneMap([0, 5], ("A", "B"), [1.0, 1.0]))


def test_top_quantile_examples(rng):
    totals = rng.random(1000)
    assert list(top_quantile_tiles(totals, 0.001)) == [int(np.argmax(totals))]
    tied = np.array([1.0, 5.0, 3.0, 5.0, 2.0])
    assert list(top_quantile_tiles(tied, 0.2)) == [1]
    assert list(top_quantile_tiles(tied, 0.4)) == [1, 3]
    # the quantile arithmetic for a 5,259-tile hot set
    n = 5_259_000
    assert math.ceil(round(0.001 * n, 9)) == 5259


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5])
def test_top_quantile_bad_q(q):
    with pytest.raises(InputValidationError):
        top_quantile_tiles(np.ones(10), q)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3000), st.floats(1e-4, 0.999))
def test_top_quantile_size(n, q):
    got = top_quantile_tiles(np.zeros(n), q)
    expected = max(1, math.ceil(round(q * n, 9)))
    assert len(got) == expected
    assert list(got) == list(range(expected))  # all tied: lowest ids


def _pois(rows):
    pid, cat, tile = zip(*rows) if rows else ((), (), ())
    return PoiTable(tuple(pid), tuple(cat), np.array(tile, dtype=np.int64))


def _same(a, b):
    return (a.place_ids, a.categories, a.tile_ids.tolist()) == (b.place_ids, b.categories, b.tile_ids.tolist())


def test_dedup_examples():
    p = _pois([("a", "lake", 0), ("a", "school", 1)])
    d = dedup_pois(p)
    assert d.place_ids == ("a",) and d.categories == ("lake",)
    q = _pois([("a", "lake", 0), ("b", "lake", 1)])
    assert _same(dedup_pois(q), q)
    r = _pois([("x", "c", 0), ("y", "c", 1), ("x", "d", 2), ("z", "c", 0), ("y", "e", 3)])
    assert _same(dedup_pois(dedup_pois(r)), dedup_pois(r))
    assert dedup_pois(r).place_ids == ("x", "y", "z")


def test_poi_hand_walks():
    totals = np.array([90.0, 0.0])
    stats, empty = poi_category_stats([0], _pois([(f"p{i}", "embassy", 0) for i in range(3)]), totals)
    assert stats == [PoiCategoryStat("embassy", 3, 30.0)]
    assert empty == []

    stats, _ = poi_category_stats([0], _pois([("p1", "lake", 0), ("p2", "lake", 0)]), totals)
    assert stats == []

    totals = np.array([60.0, 30.0, 5.0])
    pois = _pois([("p1", "church", 0), ("p2", "church", 0), ("p3", "church", 1)])
    stats, _ = poi_category_stats([0, 1], pois, totals)
    assert stats == [PoiCategoryStat("church", 3, 30.0)]


def test_poi_min_count_and_order():
    totals = np.array([100.0, 40.0, 10.0, 7.0])
    rows = [("a", "x", 0), ("b", "x", 0), ("c", "y", 1), ("d", "y", 1), ("e", "y", 2),
            ("f", "x", 1), ("g", "z", 3)]
    stats, empty = poi_category_stats([0, 1, 2], _pois(rows), totals, min_count=3)
    # per-POI shares: tile0 50 each, tile1 40/3 each, tile2 10
    assert [s.category for s in stats] == ["x", "y"]
    assert stats[0].avg_traffic_per_poi == pytest.approx((50 + 50 + 40 / 3) / 3)
    assert stats[1].avg_traffic_per_poi == pytest.approx((40 / 3 + 40 / 3 + 10) / 3)
    stats1, _ = poi_category_stats([0, 1, 2], _pois(rows), totals, min_count=1)
    assert {s.category for s in stats1} == {"x", "y"}  # z lies outside the hot tiles
    stats, empty = poi_category_stats([0, 3, 1], _pois(rows[:2]), totals, min_count=1)
    assert empty == [3, 1]


def test_poi_tile_without_traffic_row():
    with pytest.raises(InputValidationError, match="no traffic row"):
        poi_category_stats([7], _pois([("a", "x", 7)]), np.ones(3))


def test_poi_order_invariance(rng):
    totals = rng.random(20) * 100
    rows = [(f"p{i}", "abcd"[rng.integers(4)], int(rng.integers(20))) for i in range(80)]
    hot = list(top_quantile_tiles(totals, 0.5))
    base, _ = poi_category_stats(hot, dedup_pois(_pois(rows)), totals)
    for _ in range(5):
        perm = [rows[i] for i in rng.permutation(len(rows))]
        got, _ = poi_category_stats(hot, dedup_pois(_pois(perm)), totals)
        assert [(s.category, s.n_pois) for s in got] == [(s.category, s.n_pois) for s in base]
        for a, b in zip(got, base):
            assert a.avg_traffic_per_poi == pytest.approx(b.avg_traffic_per_poi, rel=1e-12)
