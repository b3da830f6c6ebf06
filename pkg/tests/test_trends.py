import numpy as np
import pytest

from trafficlens.errors import InputValidationError, NumericError
from trafficlens.gridio import TrendsTable
from trafficlens.trends import prepare_trends


def _table(values, terms=None, region_zones=None):
    values = np.asarray(values, dtype=float)
    regions = tuple(f"R{i}" for i in range(values.shape[0]))
    terms = terms or tuple(f"t{j}" for j in range(values.shape[1]))
    if region_zones is None:
        region_zones = {r: (f"{r}a", f"{r}b") for r in regions}
    return TrendsTable(regions, tuple(terms), values, region_zones)


def test_eighteen_terms_seven_sparse(rng):
    v = rng.uniform(0, 100, size=(13, 18))
    zero = [1, 4, 5, 9, 12, 16, 17]
    v[:, zero] = 0
    res = prepare_trends(_table(v), k=3)
    assert len(res.kept_terms) == 11
    assert res.dropped_terms == tuple(f"t{j}" for j in zero)
    assert set(res.kept_terms) | set(res.dropped_terms) == {f"t{j}" for j in range(18)}
    assert res.pca.loadings.shape == (11, 3)


def test_identical_rows_error():
    with pytest.raises(NumericError):
        prepare_trends(_table([[10, 20, 30]] * 4), k=2)


def test_perfect_correlation_single_component():
    res = prepare_trends(_table([[10, 30], [20, 50]]), k=2)
    assert res.pca.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)
    assert res.pca.explained_variance_ratio[1] == pytest.approx(0.0, abs=1e-12)


def test_broadcast_identical_within_region(rng):
    res = prepare_trends(_table(rng.uniform(0, 100, (6, 5))), k=3)
    for r in range(6):
        assert res.zone_scores[f"R{r}a"] == res.zone_scores[f"R{r}b"]
    zones, cols = res.zone_table([1, 3])
    assert list(cols) == ["PC1", "PC3"]
    i, j = zones.index("R2a"), zones.index("R2b")
    assert cols["PC1"][i] == cols["PC1"][j]
    with pytest.raises(InputValidationError):
        res.zone_table([4])


def test_dropping_zero_term_does_not_change_scores(rng):
    v = rng.uniform(0, 100, (8, 4))
    base = prepare_trends(_table(v), k=3)
    padded = np.column_stack([v[:, :2], np.zeros(8), v[:, 2:]])
    res = prepare_trends(_table(padded, terms=("t0", "t1", "zz", "t2", "t3")), k=3)
    assert res.dropped_terms == ("zz",)
    np.testing.assert_array_equal(res.pca.scores, base.pca.scores)


@pytest.mark.parametrize("values,k", [
    ([[1, 2, 3]], 2),  # one region
    ([[1, 0, 0], [2, 0, 0]], 1),  # one kept term
    ([[1, 2, 0], [3, 1, 0]], 3),  # k above kept terms
])
def test_guards(values, k):
    with pytest.raises(InputValidationError):
        prepare_trends(_table(values), k=k)
