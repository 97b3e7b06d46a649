"""Posterior summarization: rank estimates, FDR support selection, point estimates.

Support selection follows the Bayesian false-discovery-rate convention:
entries are ranked by posterior inclusion probability and the largest prefix
whose average posterior exclusion probability stays at or below the target
rate is selected. Diagonal entries never enter the pool (they are never
zero under the model).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = [
    "ChainOutput",
    "PosteriorSummary",
    "estimate_rank",
    "fdr_select",
    "summarize",
]


@dataclass
class ChainOutput:
    """Stored thinned draws plus the summaries the selection rules consume.

    ``inclusion_freq`` holds posterior nonzero frequencies for the sparse
    covariance entries, precision entries, or graph edges depending on the
    variant; only the strict upper triangle is meaningful.
    """

    draws: dict[str, np.ndarray]
    inclusion_freq: np.ndarray
    rank_histogram: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        freq = np.asarray(self.inclusion_freq, dtype=float)
        if freq.size and (freq.min() < -1e-12 or freq.max() > 1.0 + 1e-12):
            raise ValueError("inclusion frequencies must lie in [0, 1]")
        self.inclusion_freq = freq
        self.rank_histogram = np.asarray(self.rank_histogram, dtype=np.int64)

    @property
    def stored_draws(self) -> int:
        return int(self.rank_histogram.sum())


@dataclass
class PosteriorSummary:
    rank: int
    rank_numerical: int
    selected_edges: frozenset[tuple[int, int]]
    sigma_mean: np.ndarray
    low_rank_mean: np.ndarray
    residual_mean: np.ndarray
    residual_masked: np.ndarray
    ci_halfwidth: np.ndarray
    fdr_target: float
    variant: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant,
            "rank": self.rank,
            "rank_numerical": self.rank_numerical,
            "fdr_target": self.fdr_target,
            "selected_edges": sorted(map(list, self.selected_edges)),
            "sigma_mean": self.sigma_mean.tolist(),
            "low_rank_mean": self.low_rank_mean.tolist(),
            "residual_mean": self.residual_mean.tolist(),
            "residual_masked": self.residual_masked.tolist(),
            "ci_halfwidth": self.ci_halfwidth.tolist(),
        }


def estimate_rank(output: ChainOutput) -> int:
    """Posterior-mode number of active factors; ties break to the smaller rank."""
    hist = output.rank_histogram
    if hist.sum() == 0:
        raise ValueError("chain stored no draws")
    return int(np.argmax(hist))


def fdr_select(
    inclusion_freq: np.ndarray, fdr_target: float
) -> frozenset[tuple[int, int]]:
    """Select upper-triangular entries by descending posterior inclusion.

    Keeps the largest prefix of the ranked entries whose average posterior
    probability of being null, ``mean(1 - p)``, stays at or below the target.
    """
    if not 0.0 < fdr_target < 1.0:
        raise ValueError("fdr_target must be in (0, 1)")
    freq = np.asarray(inclusion_freq, dtype=float)
    q = freq.shape[0]
    iu = np.triu_indices(q, k=1)
    probs = freq[iu]
    if probs.size == 0:
        return frozenset()
    order = np.lexsort((iu[1], iu[0], -probs))  # prob desc, then index asc
    sorted_probs = probs[order]
    prefix_fdr = np.cumsum(1.0 - sorted_probs) / np.arange(1, probs.size + 1)
    qualifying = np.nonzero(prefix_fdr <= fdr_target)[0]
    if qualifying.size == 0:
        return frozenset()
    cut = int(qualifying[-1]) + 1
    chosen = order[:cut]
    return frozenset((int(iu[0][m]), int(iu[1][m])) for m in chosen)


def _numerical_rank(matrix: np.ndarray, rel_tol: float = 1e-6) -> int:
    sv = np.linalg.svd(matrix, compute_uv=False)
    if sv.size == 0 or sv[0] <= 0:
        return 0
    return int(np.count_nonzero(sv > rel_tol * sv[0]))


def summarize(output: ChainOutput, fdr_target: float = 0.20) -> PosteriorSummary:
    """Point estimates and support selection from a finished chain.

    The residual point estimate has unselected off-diagonals forced to zero;
    the unmasked posterior mean is retained alongside so that the identity
    ``sigma_mean = low_rank_mean + residual_mean`` is exact.
    """
    draws = output.draws
    sigma_mean = draws["Sigma"].mean(axis=0)
    low_rank_mean = draws["L"].mean(axis=0)
    residual_key = "C" if "C" in draws else "S"
    residual_mean = draws[residual_key].mean(axis=0)
    selected = fdr_select(output.inclusion_freq, fdr_target)
    masked = residual_mean.copy()
    q = masked.shape[0]
    keep = np.zeros((q, q), dtype=bool)
    np.fill_diagonal(keep, True)
    for j, jp in selected:
        keep[j, jp] = keep[jp, j] = True
    masked[~keep] = 0.0
    lo, hi = np.percentile(draws["Sigma"], [2.5, 97.5], axis=0)
    return PosteriorSummary(
        rank=estimate_rank(output),
        rank_numerical=_numerical_rank(low_rank_mean),
        selected_edges=selected,
        sigma_mean=sigma_mean,
        low_rank_mean=low_rank_mean,
        residual_mean=residual_mean,
        residual_masked=masked,
        ci_halfwidth=(hi - lo) / 2.0,
        fdr_target=fdr_target,
        variant=str(output.meta.get("variant", "lrsd")),
    )
