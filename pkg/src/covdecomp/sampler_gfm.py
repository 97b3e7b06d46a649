"""Graphical factor model samplers: decomposable-HIW and lasso-precision variants.

Both variants share the factor block of the low-rank plus sparse sampler and
differ in the residual model. The HIW variant keeps the residual covariance
``S`` Markov to a decomposable graph: the graph moves by single-edge
Metropolis-Hastings toggles against a conditional that integrates ``S`` out
analytically, ``S`` is then redrawn from its conjugate HIW posterior, and the
graph-size penalty exponent ``xi`` moves by a log-scale random walk. The
lasso variant puts exact-zero point masses on the entries of the residual
precision ``C`` and updates them entrywise through the Cholesky
reparameterization, so positive definiteness is preserved by a simple
interval constraint.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln, logsumexp, multigammaln

from .distributions import (
    PiecewiseProposal,
    log_hiw_normalizer,
    sample_hiw,
    sample_piecewise_mixture,
)
from .graphs import (
    UndirectedGraph,
    clique_decomposition,
    decomposable_neighborhood_size,
    is_decomposable,
    propose_edge_toggle,
)
from .model_core import Hyperparameters, ObservationMatrix, PrecisionState
from .posterior import ChainOutput
from .sampler_lrsd import ChainConfig, FactorBlock, NumericalChainError, ResidualScatter, lambda_posterior_params

__all__ = [
    "GraphState",
    "RwConfig",
    "GfmHiwSampler",
    "GfmLassoSampler",
    "run_gfm_chain",
    "log_graph_size_normalizer",
]

logger = logging.getLogger(__name__)


@dataclass
class GraphState:
    graph: UndirectedGraph
    xi: float


@dataclass(frozen=True)
class RwConfig:
    """Step size of the log-scale random walk on the graph-size exponent."""

    sigma_xi: float = 0.3

    def __post_init__(self):
        if self.sigma_xi <= 0:
            raise ValueError("sigma_xi must be positive")


@lru_cache(maxsize=8)
def _decomposable_edge_counts(q: int) -> tuple[int, ...]:
    """Number of decomposable graphs on q labeled vertices per edge count.

    Exact by enumeration; only feasible for small q (used when q <= 5).
    """
    n_pairs = q * (q - 1) // 2
    pairs = [(j, jp) for j in range(q) for jp in range(j + 1, q)]
    counts = [0] * (n_pairs + 1)
    for mask in range(1 << n_pairs):
        edges = [pairs[i] for i in range(n_pairs) if mask >> i & 1]
        if is_decomposable(UndirectedGraph(q, edges)):
            counts[len(edges)] += 1
    return tuple(counts)


def log_graph_size_normalizer(q: int, xi: float) -> float:
    """Log of ``sum_G exp(-|G|^xi)`` over decomposable graphs on q vertices.

    Exact for ``q <= 5``. For larger q the count of decomposable graphs with
    ``e`` edges is replaced by the count of all graphs ``C(q(q-1)/2, e)``,
    an upper bound; only the edge count enters the prior, so this is the one
    approximation in the model and it cancels nowhere.
    """
    n_pairs = q * (q - 1) // 2
    e = np.arange(n_pairs + 1, dtype=float)
    penalties = np.zeros(n_pairs + 1)
    penalties[1:] = e[1:] ** xi
    if q <= 5:
        counts = np.array(_decomposable_edge_counts(q), dtype=float)
        with np.errstate(divide="ignore"):
            log_counts = np.log(counts)
    else:
        log_counts = gammaln(n_pairs + 1) - gammaln(e + 1) - gammaln(n_pairs - e + 1)
    return float(logsumexp(log_counts - penalties))


def _log_size_penalty(edge_count: int, xi: float) -> float:
    return 0.0 if edge_count == 0 else -float(edge_count) ** xi


class GfmHiwSampler:
    """Factor model with hyper-inverse Wishart residuals on a learned graph."""

    def __init__(
        self,
        data: ObservationMatrix,
        hyper: Hyperparameters,
        rng: np.random.Generator,
        *,
        dof_mode: str = "conjugate",
        hastings_exact: bool = False,
        graph_moves_per_iter: int | None = None,
        rw: RwConfig = RwConfig(),
        init_graph: UndirectedGraph | None = None,
        freeze_graph: bool = False,
        disable_point_mass: bool = False,
    ):
        if dof_mode not in ("conjugate", "literal"):
            raise ValueError("dof_mode must be 'conjugate' or 'literal'")
        self.factor = FactorBlock(data.data, hyper, rng, disable_point_mass)
        self.hyper = hyper
        q = self.factor.q
        self.phi = hyper.phi_matrix(q)
        self.dof_mode = dof_mode
        self.hastings_exact = hastings_exact
        self.graph_moves = q if graph_moves_per_iter is None else int(graph_moves_per_iter)
        self.rw = rw
        self.freeze_graph = freeze_graph
        graph = init_graph if init_graph is not None else UndirectedGraph.empty(q)
        if not is_decomposable(graph):
            raise ValueError("initial graph must be decomposable")
        self.graph_state = GraphState(graph=graph, xi=1.0)
        sample_var = np.clip(np.var(data.data, axis=1), 1e-8, None)
        self.S = np.diag(sample_var)
        self.S_inv = np.diag(1.0 / sample_var)
        self.graph_accepts = 0
        self.graph_attempts = 0
        self.xi_accepts = 0
        self.xi_attempts = 0
        # clique-level and graph-level caches; the data-dependent ones are
        # reset every sweep because the residual scatter changes
        self._prior_terms: dict[tuple[int, ...], float] = {}
        self._post_terms: dict[tuple[int, ...], float] = {}
        self._prior_h: dict[UndirectedGraph, float] = {}
        self._post_h: dict[UndirectedGraph, float] = {}

    @property
    def q(self) -> int:
        return self.factor.q

    @property
    def n(self) -> int:
        return self.factor.n

    # -- collapsed graph move -------------------------------------------

    def _clique_term(self, vertices, dof, scale, cache) -> float:
        val = cache.get(vertices)
        if val is None:
            idx = list(vertices)
            p = len(idx)
            block = np.take(np.take(scale, idx, axis=0), idx, axis=1)
            sign, logdet = np.linalg.slogdet(block / 2.0)
            if sign <= 0:
                raise NumericalChainError("clique scale block lost positive definiteness")
            x = (dof + p - 1) / 2.0
            val = x * logdet - multigammaln(x, p)
            cache[vertices] = val
        return val

    def _log_collapsed(self, graph, posterior_scale, post_dof) -> float:
        prior = self._prior_h.get(graph)
        post = self._post_h.get(graph)
        if prior is None or post is None:
            prior = 0.0
            post = 0.0
            for clique, sep in clique_decomposition(graph):
                prior += self._clique_term(clique, self.hyper.delta, self.phi, self._prior_terms)
                post += self._clique_term(clique, post_dof, posterior_scale, self._post_terms)
                if sep:
                    prior -= self._clique_term(sep, self.hyper.delta, self.phi, self._prior_terms)
                    post -= self._clique_term(sep, post_dof, posterior_scale, self._post_terms)
            if len(self._prior_h) > 30_000:
                self._prior_h.clear()
            self._prior_h[graph] = prior
            self._post_h[graph] = post
        return prior - post + _log_size_penalty(graph.edge_count, self.graph_state.xi)

    def update_graph(
        self, rng: np.random.Generator, scatter: ResidualScatter | None = None
    ) -> None:
        """One MH edge-toggle against the S-marginalized graph conditional."""
        if self.freeze_graph:
            return
        lam_mat = (scatter or ResidualScatter.from_residuals(self.factor.resid)).Lambda
        post_scale = self.phi + lam_mat
        post_dof = self.hyper.delta + self.n - (1 if self.dof_mode == "literal" else 0)
        self._post_terms = {}
        self._post_h = {}
        current = self.graph_state.graph
        log_cur = self._log_collapsed(current, post_scale, post_dof)
        for _ in range(self.graph_moves):
            proposal = propose_edge_toggle(current, rng)
            log_prop = self._log_collapsed(proposal, post_scale, post_dof)
            log_alpha = log_prop - log_cur
            if self.hastings_exact:
                log_alpha += math.log(decomposable_neighborhood_size(current))
                log_alpha -= math.log(decomposable_neighborhood_size(proposal))
            self.graph_attempts += 1
            if log_alpha >= 0.0 or math.log(1.0 - rng.random()) < log_alpha:
                current = proposal
                log_cur = log_prop
                self.graph_accepts += 1
        self.graph_state.graph = current

    def update_S_hiw(
        self, rng: np.random.Generator, scatter: ResidualScatter | None = None
    ) -> None:
        lam_mat = (scatter or ResidualScatter.from_residuals(self.factor.resid)).Lambda
        self.S = sample_hiw(
            self.graph_state.graph,
            self.hyper.delta + self.n,
            self.phi + lam_mat,
            rng,
        )
        chol = cho_factor(self.S, lower=True, check_finite=False)
        self.S_inv = cho_solve(chol, np.eye(self.q), check_finite=False)

    def update_xi(self, rng: np.random.Generator, rw: RwConfig | None = None) -> None:
        """Log-scale random walk on the graph-size exponent, Jacobian-corrected."""
        rw = rw or self.rw
        state = self.graph_state
        self.xi_attempts += 1
        proposal = math.exp(math.log(state.xi) + rw.sigma_xi * rng.standard_normal())
        if not 0.0 < proposal < self.hyper.xi_max:
            return
        edges = state.graph.edge_count
        log_alpha = (
            _log_size_penalty(edges, proposal)
            - _log_size_penalty(edges, state.xi)
            - log_graph_size_normalizer(self.q, proposal)
            + log_graph_size_normalizer(self.q, state.xi)
            + math.log(proposal)
            - math.log(state.xi)
        )
        if log_alpha >= 0.0 or math.log(1.0 - rng.random()) < log_alpha:
            state.xi = proposal
            self.xi_accepts += 1

    def sweep(self, rng: np.random.Generator) -> None:
        # factor block first, then the collapsed graph move, then S given the
        # fresh graph so no update conditions on a stale residual covariance
        self.factor.sweep(self.S_inv, rng)
        scatter = ResidualScatter.from_residuals(self.factor.resid)
        self.update_graph(rng, scatter)
        self.update_S_hiw(rng, scatter)
        self.update_xi(rng)


class GfmLassoSampler:
    """Factor model with exact-zero selection on the residual precision."""

    def __init__(
        self,
        data: ObservationMatrix,
        hyper: Hyperparameters,
        rng: np.random.Generator,
        grid_count: int = 100,
        disable_point_mass: bool = False,
    ):
        self.factor = FactorBlock(data.data, hyper, rng, disable_point_mass)
        self.hyper = hyper
        self.grid_count = int(grid_count)
        self.disable_point_mass = disable_point_mass
        q = self.factor.q
        sample_var = np.clip(np.var(data.data, axis=1), 1e-8, None)
        rho0 = 1.0 if disable_point_mass else 0.5
        self.precision = PrecisionState(
            C=np.diag(1.0 / sample_var), lam=1.0, rho=np.full((q, q), rho0)
        )
        self.events = {"cholesky_jitter": 0, "offdiag_skipped": 0}
        self.offdiag_attempts = 0
        self.offdiag_accepts = 0
        self._grid = np.linspace(-1.0, 1.0, self.grid_count + 1)
        self._mids = 0.5 * (self._grid[:-1] + self._grid[1:])
        # permutation index pairs, built once: the updated entries go last
        self._diag_order = {
            j: np.ix_(*[[v for v in range(q) if v != j] + [j]] * 2) for j in range(q)
        }
        self._pair_order = {
            (j, jp): np.ix_(*[[v for v in range(q) if v not in (j, jp)] + [j, jp]] * 2)
            for j in range(q)
            for jp in range(j + 1, q)
        }

    @property
    def q(self) -> int:
        return self.factor.q

    @property
    def n(self) -> int:
        return self.factor.n

    def _permuted_cholesky(self, order_ix) -> np.ndarray:
        c = self.precision.C[order_ix]
        try:
            return np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            self.events["cholesky_jitter"] += 1
            jitter = 1e-10 * max(np.trace(c) / c.shape[0], 1.0)
            logger.warning("precision Cholesky failed; retrying with jitter %.2e", jitter)
            return np.linalg.cholesky(c + jitter * np.eye(c.shape[0]))

    def update_C_diagonal(
        self, rng: np.random.Generator, scatter: ResidualScatter | None = None
    ) -> None:
        """Gamma draws for the precision diagonal above its Schur-complement floor."""
        lam_mat = (scatter or ResidualScatter.from_residuals(self.factor.resid)).Lambda
        c = self.precision.C
        for j in range(self.q):
            low = self._permuted_cholesky(self._diag_order[j])
            floor = c[j, j] - low[-1, -1] ** 2
            rate = (lam_mat[j, j] + self.precision.lam) / 2.0
            c[j, j] = floor + rng.gamma(0.5 * self.n + 1.0, 1.0 / rate)

    def update_C_offdiagonal(
        self, rng: np.random.Generator, scatter: ResidualScatter | None = None
    ) -> None:
        """Independent MH with a point mass at zero for each precision entry.

        In the Cholesky reduction with the pair moved to the trailing rows,
        the admissible values form the interval ``|C_jj' - a| < b sqrt(c)``;
        the transformed coordinate ``nu`` lives on (-1, 1) and the atom sits
        at ``nu = -a / (b sqrt(c))`` when that point falls inside.
        """
        lam_mat = (scatter or ResidualScatter.from_residuals(self.factor.resid)).Lambda
        cmat = self.precision.C
        lam = self.precision.lam
        n = self.n
        for j in range(self.q - 1):
            for jp in range(j + 1, self.q):
                self.offdiag_attempts += 1
                low = self._permuted_cholesky(self._pair_order[(j, jp)])
                head = low[-2, : self.q - 2] @ low[-1, : self.q - 2]
                a = float(head)
                b = float(low[-2, -2])
                c_val = float(low[-1, -2] ** 2 + low[-1, -1] ** 2)
                width = b * math.sqrt(c_val)
                if width <= 0 or not math.isfinite(width):
                    self.events["offdiag_skipped"] += 1
                    continue
                lam_jjp = lam_mat[j, jp]
                rho = self.precision.rho[j, jp]

                def log_g(nu):
                    val = nu * width + a
                    return 0.5 * n * np.log1p(-nu * nu) - lam_jjp * val - lam * np.abs(val)

                log_g_mids = log_g(self._mids)
                # the continuous weight carries the Jacobian of
                # nu = (C_jj' - a)/(b sqrt(c)); without it the atom odds would
                # be off by that factor relative to the conditional of C_jj'
                log_heights = log_g_mids + (
                    math.log(rho * lam * width / 2.0) if rho > 0 else -np.inf
                )
                kappa = -a / width
                if rho < 1.0 and abs(kappa) < 1.0:
                    log_atom = math.log1p(-rho) + 0.5 * n * math.log1p(-kappa * kappa)
                else:
                    log_atom = -np.inf
                try:
                    proposal = PiecewiseProposal.from_log_weights(
                        self._grid, log_heights, kappa, log_atom
                    )
                except ValueError:
                    self.events["offdiag_skipped"] += 1
                    continue
                nu_star = sample_piecewise_mixture(proposal, rng)
                nu_cur = (cmat[j, jp] - a) / width

                star_atom = nu_star == kappa and np.isfinite(log_atom)
                cur_atom = cmat[j, jp] == 0.0
                log_ratio = 0.0
                if not star_atom:
                    log_ratio += float(log_g(nu_star)) - float(
                        log_g_mids[proposal.interval_of(nu_star)]
                    )
                if not cur_atom and abs(nu_cur) < 1.0:
                    log_ratio -= float(log_g(nu_cur)) - float(
                        log_g_mids[proposal.interval_of(nu_cur)]
                    )
                if log_ratio >= 0.0 or math.log(1.0 - rng.random()) < log_ratio:
                    new_val = 0.0 if star_atom else nu_star * width + a
                    cmat[j, jp] = cmat[jp, j] = new_val
                    self.offdiag_accepts += 1

    def update_lambda_C(self, rng: np.random.Generator) -> None:
        shape, rate = lambda_posterior_params(
            self.precision.C, self.hyper.a_lambda, self.hyper.b_lambda
        )
        self.precision.lam = float(rng.gamma(shape, 1.0 / rate))

    def update_rho_C(self, rng: np.random.Generator) -> None:
        if self.disable_point_mass:
            return
        iu = np.triu_indices(self.q, k=1)
        nonzero = self.precision.C[iu] != 0.0
        draws = rng.beta(self.hyper.a_rho + nonzero, self.hyper.b_rho + ~nonzero)
        self.precision.rho[iu] = draws
        self.precision.rho.T[iu] = draws

    def sweep(self, rng: np.random.Generator) -> None:
        self.factor.sweep(self.precision.C, rng)
        scatter = ResidualScatter.from_residuals(self.factor.resid)
        self.update_C_diagonal(rng, scatter)
        self.update_C_offdiagonal(rng, scatter)
        self.update_lambda_C(rng)
        self.update_rho_C(rng)


def run_gfm_chain(
    data: ObservationMatrix,
    hyper: Hyperparameters,
    config: ChainConfig,
    variant: str,
    *,
    dof_mode: str = "conjugate",
    hastings_exact: bool = False,
    graph_moves_per_iter: int | None = None,
    rw: RwConfig = RwConfig(),
    progress: bool = False,
) -> ChainOutput:
    """Run one graphical-factor-model chain and collect thinned draws.

    ``variant`` selects ``"hiw"`` (decomposable graphs) or ``"lasso"``
    (unrestricted graphs via the sparse precision). Deterministic by seed.
    """
    if variant not in ("hiw", "lasso"):
        raise ValueError("variant must be 'hiw' or 'lasso'")
    rng = np.random.default_rng(config.seed)
    q = data.q
    r = hyper.r
    stored = config.stored
    draws: dict[str, np.ndarray] = {
        "z": np.empty((stored, r), dtype=np.int64),
        "tau2": np.empty((stored, r)),
        "M": np.empty((stored, q, r)),
        "Sigma": np.empty((stored, q, q)),
        "L": np.empty((stored, q, q)),
    }
    if variant == "hiw":
        sampler: GfmHiwSampler | GfmLassoSampler = GfmHiwSampler(
            data, hyper, rng,
            dof_mode=dof_mode, hastings_exact=hastings_exact,
            graph_moves_per_iter=graph_moves_per_iter, rw=rw,
        )
        draws["S"] = np.empty((stored, q, q))
        draws["graph"] = np.empty((stored, q, q), dtype=np.uint8)
        draws["xi"] = np.empty(stored)
    else:
        sampler = GfmLassoSampler(data, hyper, rng, grid_count=config.grid_count)
        draws["C"] = np.empty((stored, q, q))
        draws["S"] = np.empty((stored, q, q))
        draws["lambda"] = np.empty(stored)

    idx = 0
    total = config.burn_in + config.samples
    for it in range(total):
        try:
            sampler.sweep(rng)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalChainError(f"chain aborted at iteration {it}: {exc}") from exc
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            st = sampler.factor.state
            draws["z"][idx] = st.indicators
            draws["tau2"][idx] = st.variances
            draws["M"][idx] = st.loadings
            low_rank = st.low_rank_matrix()
            draws["L"][idx] = low_rank
            if variant == "hiw":
                draws["S"][idx] = sampler.S
                draws["Sigma"][idx] = low_rank + sampler.S
                draws["graph"][idx] = sampler.graph_state.graph.to_adjacency()
                draws["xi"][idx] = sampler.graph_state.xi
            else:
                cmat = sampler.precision.C
                chol = cho_factor(cmat, lower=True, check_finite=False)
                resid_cov = cho_solve(chol, np.eye(q), check_finite=False)
                draws["C"][idx] = cmat
                draws["S"][idx] = resid_cov
                draws["Sigma"][idx] = low_rank + resid_cov
                draws["lambda"][idx] = sampler.precision.lam
            idx += 1
        if progress and (it + 1) % 500 == 0:
            import sys

            print(f"[gfm-{variant}] iteration {it + 1}/{total}", file=sys.stderr)

    if variant == "hiw":
        freq = draws["graph"].mean(axis=0)
    else:
        freq = (draws["C"] != 0.0).mean(axis=0)
    np.fill_diagonal(freq, 0.0)
    histogram = np.bincount(draws["z"].sum(axis=1), minlength=r + 1)
    meta = {
        "variant": f"gfm-{variant}",
        "seed": config.seed,
        "config": {
            "burn_in": config.burn_in,
            "samples": config.samples,
            "thin": config.thin,
            "grid_count": config.grid_count,
        },
        "q": q,
        "n": data.n,
        "r": r,
        "dof_mode": dof_mode if variant == "hiw" else None,
    }
    if variant == "hiw":
        meta["graph_acceptance"] = (
            sampler.graph_accepts / sampler.graph_attempts if sampler.graph_attempts else float("nan")
        )
        meta["xi_acceptance"] = (
            sampler.xi_accepts / sampler.xi_attempts if sampler.xi_attempts else float("nan")
        )
    else:
        meta["events"] = dict(sampler.events)
        meta["offdiag_acceptance"] = (
            sampler.offdiag_accepts / sampler.offdiag_attempts
            if sampler.offdiag_attempts
            else float("nan")
        )
    return ChainOutput(draws=draws, inclusion_freq=freq, rank_histogram=histogram, meta=meta)
