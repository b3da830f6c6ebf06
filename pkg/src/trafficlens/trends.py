"""Search-term popularity: drop all-zero terms, PCA, broadcast region scores to zones."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from trafficlens.errors import InputValidationError
from trafficlens.gridio import TrendsTable
from trafficlens.stats import PcaResult, pca


@dataclass(frozen=True)
class TrendsPrepResult:
    kept_terms: tuple
    dropped_terms: tuple
    pca: PcaResult
    region_ids: tuple
    zone_scores: dict  # zone_id -> tuple of k scores

    def score_columns(self, components=None) -> list[str]:
        k = self.pca.loadings.shape[1]
        comps = range(1, k + 1) if components is None else components
        return [f"PC{c}" for c in comps]

    def zone_table(self, components=None) -> tuple[tuple, dict]:
        """Zone ids and ``{"PCi": array}`` for the selected (1-based) components."""
        zones = tuple(sorted(self.zone_scores))
        k = self.pca.loadings.shape[1]
        comps = list(range(1, k + 1)) if components is None else [int(c) for c in components]
        for c in comps:
            if not 1 <= c <= k:
                raise InputValidationError(f"component PC{c} not computed (k={k})")
        cols = {f"PC{c}": np.array([self.zone_scores[z][c - 1] for z in zones]) for c in comps}
        return zones, cols


def prepare_trends(trends: TrendsTable, k: int = 3) -> TrendsPrepResult:
    """Standardized PCA over the non-sparse terms, region scores mapped to zones."""
    if len(trends.region_ids) < 2:
        raise InputValidationError("need at least 2 regions")
    dropped = trends.sparse_terms()
    kept_idx = [i for i, t in enumerate(trends.terms) if t not in dropped]
    kept = tuple(trends.terms[i] for i in kept_idx)
    if len(kept) < 2:
        raise InputValidationError("need at least 2 non-sparse terms")
    if k > len(kept):
        raise InputValidationError(f"k={k} exceeds the {len(kept)} non-sparse terms")
    result = pca(trends.values[:, kept_idx], k=k, standardize=True, names=kept)
    zone_scores = {}
    for r, region in enumerate(trends.region_ids):
        scores = tuple(float(v) for v in result.scores[r])
        for z in trends.region_zones.get(region, ()):
            zone_scores[z] = scores
    return TrendsPrepResult(kept, dropped, result, trends.region_ids, zone_scores)
