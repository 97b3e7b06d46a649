"""Random-variate generators used by the covariance samplers.

Conventions
-----------
Generalized inverse Gaussian (GIG): density proportional to
``x^(order-1) * exp(-(chi/x + psi*x)/2)`` on ``x > 0``.

Inverse Wishart: we use the parameterization with density proportional to
``|S|^-(dof/2 + p) * exp(-tr(S^-1 Phi)/2)`` for a ``p x p`` matrix. Relative
to the common Wishart-style convention ``IW(nu, Psi)`` with density
``|S|^-((nu+p+1)/2) exp(-tr(S^-1 Psi)/2)``, this corresponds to
``nu = dof + p - 1`` and ``Psi = Phi``. The hyper-inverse Wishart (HIW)
factorizes this family over the cliques and separators of a decomposable
graph, and is consistent under marginalization: every clique marginal is
inverse Wishart with the same ``dof``.

All samplers take an explicit ``numpy.random.Generator`` and are pure given
it, so identical seeds give identical draw sequences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import multigammaln

from .graphs import UndirectedGraph, clique_decomposition

__all__ = [
    "GigParams",
    "PiecewiseProposal",
    "sample_gig",
    "sample_mvnormal",
    "sample_inverse_wishart",
    "sample_hiw",
    "log_hiw_normalizer",
    "sample_piecewise_mixture",
]

logger = logging.getLogger(__name__)

_JITTER_SCALE = 1e-10


@dataclass(frozen=True)
class GigParams:
    """Parameters of the generalized inverse Gaussian distribution.

    ``order`` is the power index, ``chi`` the coefficient of ``1/x`` and
    ``psi`` the coefficient of ``x`` inside the exponential.
    """

    order: float
    chi: float
    psi: float

    def __post_init__(self):
        if not (np.isfinite(self.order) and np.isfinite(self.chi) and np.isfinite(self.psi)):
            raise ValueError("GIG parameters must be finite")
        if self.chi < 0:
            raise ValueError(f"chi must be nonnegative, got {self.chi}")
        if self.psi <= 0:
            raise ValueError(f"psi must be positive, got {self.psi}")
        if self.chi == 0 and self.order <= 0:
            raise ValueError("chi = 0 requires order > 0 for an integrable density")


def _gig_two_param(lam: float, omega: float, rng: np.random.Generator) -> float:
    """Draw from the two-parameter GIG with density ~ y^(lam-1) e^(-omega(y+1/y)/2).

    Rejection sampler of Devroye (uniformly efficient over the whole
    parameter range). Requires ``lam >= 0`` and ``omega > 0``; the draw is
    generated as ``log(y / mode)`` and transformed back at the end.
    """
    # alpha computed in a cancellation-free form; it may still underflow to
    # exactly 0 for tiny omega, which the branches below tolerate.
    alpha = omega * omega / (math.sqrt(omega * omega + lam * lam) + lam)

    def psi(x: float) -> float:
        return -alpha * (math.cosh(x) - 1.0) - lam * (math.exp(x) - x - 1.0)

    def dpsi(x: float) -> float:
        return -alpha * math.sinh(x) - lam * (math.exp(x) - 1.0)

    x = -psi(1.0)
    if 0.5 <= x <= 2.0:
        t = 1.0
    elif x > 2.0:
        t = math.sqrt(2.0 / (alpha + lam))
    else:
        t = math.log(4.0 / (alpha + 2.0 * lam))

    x = -psi(-1.0)
    if 0.5 <= x <= 2.0:
        s = 1.0
    elif x > 2.0:
        s = math.sqrt(4.0 / (alpha * math.cosh(1.0) + lam))
    elif alpha == 0.0:
        s = 1.0 / lam
    else:
        s = math.log(1.0 + 1.0 / alpha + math.sqrt(1.0 / alpha**2 + 2.0 / alpha))
        if lam > 0.0:
            s = min(s, 1.0 / lam)

    eta = -psi(t)
    zeta = -dpsi(t)
    theta = -psi(-s)
    xi = dpsi(-s)
    p = 1.0 / xi
    r = 1.0 / zeta
    td = t - r * eta
    sd = s - p * theta
    q = td + sd

    while True:
        u = rng.random()
        v = 1.0 - rng.random()  # (0, 1]: keeps log(v) finite
        w = rng.random()
        if u < q / (p + q + r):
            cand = -sd + q * v
        elif u < (q + r) / (p + q + r):
            cand = td - r * math.log(v)
        else:
            cand = -sd + p * math.log(v)
        if -sd <= cand <= td:
            envelope = 1.0
        elif cand > td:
            envelope = math.exp(-eta - zeta * (cand - t))
        else:
            envelope = math.exp(-theta + xi * (cand + s))
        if w * envelope <= math.exp(psi(cand)):
            break

    mode_factor = lam / omega + math.sqrt(1.0 + (lam / omega) ** 2)
    return math.exp(cand) * mode_factor


def sample_gig(params: GigParams, rng: np.random.Generator) -> float:
    """Draw one variate with density ~ x^(order-1) exp(-(chi/x + psi x)/2)."""
    if params.chi == 0.0:
        # degenerates to Gamma(order, rate psi/2)
        return float(rng.gamma(params.order, 2.0 / params.psi))
    lam = params.order
    omega = math.sqrt(params.chi * params.psi)
    scale = math.sqrt(params.chi / params.psi)
    if lam < 0:
        # 1/X swaps the roles of chi and psi and negates the order
        return scale / _gig_two_param(-lam, omega, rng)
    return scale * _gig_two_param(lam, omega, rng)


def _chol_lower_with_jitter(matrix: np.ndarray, what: str) -> np.ndarray:
    """Lower Cholesky factor, retrying once with a trace-scaled jitter."""
    try:
        return cholesky(matrix, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        q = matrix.shape[0]
        jitter = _JITTER_SCALE * max(np.trace(matrix) / q, 1.0)
        logger.warning("Cholesky of %s failed; retrying with jitter %.3e", what, jitter)
        return cholesky(matrix + jitter * np.eye(q), lower=True, check_finite=False)


def sample_mvnormal(
    mean: np.ndarray, covariance: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw from a multivariate Gaussian with the given mean and covariance."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
    root = _chol_lower_with_jitter(covariance, "mvnormal covariance")
    return mean + root @ rng.standard_normal(mean.shape[0])


def sample_inverse_wishart(
    dof: float, scale: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw an SPD matrix with density ~ |S|^-(dof/2+p) exp(-tr(S^-1 scale)/2).

    Uses the Bartlett decomposition of the matching Wishart for ``S^-1``:
    with ``G`` the lower Cholesky factor of ``scale`` and ``A`` the Bartlett
    lower-triangular factor at ``nu = dof + p - 1`` degrees of freedom,
    ``S = (G A^-T)(G A^-T)^T`` is symmetric positive definite by construction.
    """
    if dof <= 0:
        raise ValueError(f"dof must be positive, got {dof}")
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    p = scale.shape[0]
    nu = dof + p - 1
    g = _chol_lower_with_jitter(scale, "inverse Wishart scale")
    a = np.zeros((p, p))
    df = nu - np.arange(p)
    a[np.diag_indices(p)] = np.sqrt(rng.chisquare(df))
    if p > 1:
        a[np.tril_indices(p, k=-1)] = rng.standard_normal(p * (p - 1) // 2)
    b_t = solve_triangular(a, g.T, lower=True, check_finite=False)
    return b_t.T @ b_t


def _sub(matrix: np.ndarray, rows: list[int], cols: list[int]) -> np.ndarray:
    return np.take(np.take(matrix, rows, axis=0), cols, axis=1)


def sample_hiw(
    graph: UndirectedGraph, dof: float, scale: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw an SPD matrix from the hyper-inverse Wishart on a decomposable graph.

    The matrix is assembled clique by clique in a perfect ordering: the first
    clique block is inverse Wishart, each later clique is drawn conditionally
    on its separator block, and cross entries outside the cliques are filled
    with the unique completion whose inverse vanishes off the edge set.
    """
    scale = np.asarray(scale, dtype=float)
    q = graph.vertex_count
    if scale.shape != (q, q):
        raise ValueError("scale must be q x q for a graph on q vertices")
    decomp = clique_decomposition(graph)

    sigma = np.zeros((q, q))
    filled: list[int] = []
    for clique, sep in decomp:
        clique = list(clique)
        sep = list(sep)
        new = [v for v in clique if v not in sep]
        if not sep:
            sigma[np.ix_(new, new)] = sample_inverse_wishart(
                dof, _sub(scale, new, new), rng
            )
            # separate component: zero covariance with everything so far
        else:
            phi_qq = _sub(scale, sep, sep)
            phi_rq = _sub(scale, new, sep)
            phi_rr = _sub(scale, new, new)
            lq = _chol_lower_with_jitter(phi_qq, "HIW separator scale")
            # phi_rq @ phi_qq^-1 and the Schur complement of the clique scale
            half = solve_triangular(lq, phi_rq.T, lower=True, check_finite=False)
            b0 = solve_triangular(lq.T, half, lower=False, check_finite=False).T
            phi_cond = phi_rr - half.T @ half
            sigma_cond = sample_inverse_wishart(dof + len(sep), phi_cond, rng)
            # coefficient matrix B ~ N(b0, sigma_cond x phi_qq^-1)
            lc = _chol_lower_with_jitter(sigma_cond, "HIW conditional draw")
            z = rng.standard_normal((len(new), len(sep)))
            b = b0 + lc @ solve_triangular(lq.T, z.T, lower=False, check_finite=False).T
            prev = [v for v in filled if v not in sep]
            sigma_qq = _sub(sigma, sep, sep)
            cross_q = b @ sigma_qq
            sigma[np.ix_(new, sep)] = cross_q
            sigma[np.ix_(sep, new)] = cross_q.T
            if prev:
                cross = b @ _sub(sigma, sep, prev)
                sigma[np.ix_(new, prev)] = cross
                sigma[np.ix_(prev, new)] = cross.T
            sigma[np.ix_(new, new)] = sigma_cond + cross_q @ b.T
        filled.extend(new)
    return sigma


def log_hiw_normalizer(graph: UndirectedGraph, dof: float, scale: np.ndarray) -> float:
    """Log normalizing constant of the HIW density on a decomposable graph.

    Computed as the product over cliques divided by the product over
    separators of the inverse Wishart constants
    ``|Phi_A / 2|^((dof+|A|-1)/2) / Gamma_|A|((dof+|A|-1)/2)``.
    """
    scale = np.asarray(scale, dtype=float)
    decomp = clique_decomposition(graph)

    def term(vertices: tuple[int, ...]) -> float:
        p = len(vertices)
        idx = list(vertices)
        sign, logdet = np.linalg.slogdet(scale[np.ix_(idx, idx)] / 2.0)
        if sign <= 0:
            raise np.linalg.LinAlgError("scale submatrix is not positive definite")
        x = (dof + p - 1) / 2.0
        return x * logdet - multigammaln(x, p)

    total = 0.0
    for clique, sep in decomp:
        total += term(clique)
        if sep:
            total -= term(sep)
    return total


class PiecewiseProposal:
    """Mixture of a point mass and a piecewise-uniform density on a grid.

    ``grid`` holds the ``k+1`` breakpoints of ``k`` consecutive intervals and
    ``heights`` the (relative) density level on each interval. The mixture is
    normalized at construction; ``point_mass_weight`` afterwards is the
    actual probability of the atom.
    """

    __slots__ = ("grid", "heights", "point_mass_location", "point_mass_weight", "_cum")

    def __init__(self, grid, heights, point_mass_location=0.0, point_mass_weight=0.0):
        grid = np.asarray(grid, dtype=float)
        heights = np.asarray(heights, dtype=float)
        if grid.ndim != 1 or heights.size == 0 or grid.size != heights.size + 1:
            raise ValueError("grid must hold one more breakpoint than heights")
        widths = grid[1:] - grid[:-1]
        if widths.min(initial=np.inf) <= 0:
            raise ValueError("grid breakpoints must be strictly increasing")
        if heights.min(initial=0.0) < 0 or point_mass_weight < 0:
            raise ValueError("weights must be nonnegative")
        masses = heights * widths
        total = float(point_mass_weight + masses.sum())
        if not np.isfinite(total):
            raise ValueError("weights must be finite")
        if total <= 0:
            raise ValueError("proposal has zero total mass")
        self.grid = grid
        self.heights = heights
        self.point_mass_location = float(point_mass_location)
        self.point_mass_weight = float(point_mass_weight / total)
        self._cum = np.cumsum(masses / total)

    @classmethod
    def from_log_weights(cls, grid, log_heights, point_mass_location, log_point_mass):
        """Build from log-scale weights, shifting by the maximum for stability.

        ``log_point_mass = -inf`` encodes an absent atom.
        """
        log_heights = np.asarray(log_heights, dtype=float)
        shift = max(float(log_heights.max(initial=-np.inf)), log_point_mass)
        if not math.isfinite(shift):
            raise ValueError("proposal has zero total mass")
        return cls(
            grid,
            np.exp(log_heights - shift),
            point_mass_location,
            math.exp(log_point_mass - shift) if math.isfinite(log_point_mass) else 0.0,
        )

    def interval_of(self, x: float) -> int:
        """Index of the interval containing ``x`` (clipped to the grid)."""
        k = int(np.searchsorted(self.grid, x, side="right")) - 1
        return min(max(k, 0), self.heights.size - 1)


def sample_piecewise_mixture(proposal: PiecewiseProposal, rng: np.random.Generator) -> float:
    """Inverse-CDF draw from a point-mass + piecewise-uniform mixture."""
    u = rng.random()
    if u < proposal.point_mass_weight:
        return proposal.point_mass_location
    # rescale the remaining uniform mass onto the continuous part
    v = (u - proposal.point_mass_weight) / max(1.0 - proposal.point_mass_weight, 1e-300)
    cum = proposal._cum
    scale = cum[-1] if cum[-1] > 0 else 1.0
    k = int(np.searchsorted(cum / scale, v, side="right"))
    k = min(k, proposal.heights.size - 1)
    lo = proposal.grid[k]
    hi = proposal.grid[k + 1]
    prev = cum[k - 1] / scale if k > 0 else 0.0
    width_frac = cum[k] / scale - prev
    frac = (v - prev) / width_frac if width_frac > 0 else rng.random()
    return float(lo + (hi - lo) * min(max(frac, 0.0), 1.0))
