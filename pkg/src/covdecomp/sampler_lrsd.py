"""Gibbs/Metropolis-Hastings sampler for the low-rank plus sparse model.

One sweep updates, in order: factor loadings, factor scores, inclusion
indicators, inclusion probabilities, factor variances, the diagonal of the
sparse residual covariance ``S`` (generalized inverse Gaussian draws), its
off-diagonals (independent MH against a point-mass + continuous target with
a piecewise-uniform proposal), the shrinkage rate ``lambda``, and the
selection probabilities ``rho``. Off-diagonal point masses produce exact
zeros, so posterior support frequencies are meaningful without thresholding.

``S`` stays positive definite constructively: each diagonal draw is bounded
below by its Schur complement shift and each off-diagonal is confined to the
interval where the conditional determinant stays positive. The inverse of
``S`` is maintained alongside it through rank-one and rank-two updates and
refreshed from a Cholesky factorization once per sweep to stop drift.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .distributions import (
    GigParams,
    PiecewiseProposal,
    sample_gig,
    sample_piecewise_mixture,
)
from .model_core import FactorState, Hyperparameters, ObservationMatrix, SparseState
from .posterior import ChainOutput

__all__ = [
    "ChainConfig",
    "ResidualScatter",
    "NumericalChainError",
    "FactorBlock",
    "LrsdSampler",
    "run_chain",
    "pi_star",
    "lambda_posterior_params",
]

logger = logging.getLogger(__name__)

_LOGIT_CAP = 36.0  # beyond this the Bernoulli probability is 0/1 in float64


class NumericalChainError(RuntimeError):
    """Raised when a chain aborts on a numerical failure."""


@dataclass(frozen=True)
class ChainConfig:
    """MCMC run lengths; ``samples`` counts post-burn-in iterations."""

    burn_in: int = 2000
    samples: int = 4000
    thin: int = 2
    grid_count: int = 100
    seed: int = 0

    def __post_init__(self):
        if min(self.burn_in, self.samples, self.thin, self.grid_count) <= 0:
            raise ValueError("chain configuration entries must be positive")

    @property
    def stored(self) -> int:
        return (self.samples + self.thin - 1) // self.thin


@dataclass(frozen=True)
class ResidualScatter:
    """Residual scatter matrix for the current factor state."""

    Lambda: np.ndarray

    @classmethod
    def from_residuals(cls, resid: np.ndarray) -> "ResidualScatter":
        return cls(resid @ resid.T)


def pi_star(pi: float, a_p: float, b_p: float) -> float:
    """Posterior weight of the continuous component of ``p_k`` given ``z_k = 0``."""
    return pi * b_p / (a_p + b_p - pi * a_p)


def lambda_posterior_params(matrix: np.ndarray, a_lambda: float, b_lambda: float):
    """Gamma(shape, rate) for the shrinkage parameter given a sparse matrix.

    The shape counts every nonzero entry on or above the diagonal; the rate
    accumulates absolute off-diagonals plus half the trace.
    """
    q = matrix.shape[0]
    iu = np.triu_indices(q, k=1)
    upper = matrix[iu]
    m = q + int(np.count_nonzero(upper))
    rate = b_lambda + float(np.abs(upper).sum()) + 0.5 * float(np.trace(matrix))
    return a_lambda + m, rate


def _bernoulli_from_logit(logit: float, rng: np.random.Generator) -> int:
    if logit > _LOGIT_CAP:
        return 1
    if logit < -_LOGIT_CAP:
        return 0
    return int(rng.random() < 1.0 / (1.0 + math.exp(-logit)))


class FactorBlock:
    """Factor-analytic half of the sampler, shared by all three variants.

    Maintains ``resid = y - M Z f`` incrementally; every update conditions
    on the residual precision handed in by the owner (``S^-1`` for the
    covariance models, ``C`` itself for the precision model).
    """

    def __init__(self, y: np.ndarray, hyper: Hyperparameters, rng: np.random.Generator,
                 disable_point_mass: bool = False):
        self.y = y
        self.q, self.n = y.shape
        self.hyper = hyper
        self.disable_point_mass = disable_point_mass
        r = hyper.r
        self.state = FactorState(
            loadings=rng.standard_normal((self.q, r)) / math.sqrt(self.q),
            scores=np.zeros((r, self.n)),
            indicators=np.ones(r, dtype=np.int64),
            variances=np.ones(r),
            inclusion_probs=np.full(r, 0.5),
            pi=0.5,
        )
        self.resid = y.copy()  # scores start at zero

    def refresh_residuals(self) -> None:
        st = self.state
        self.resid = self.y - (st.loadings * st.indicators) @ st.scores

    # -- conditional updates -------------------------------------------

    def update_loadings(self, s_inv: np.ndarray, rng: np.random.Generator) -> None:
        st = self.state
        q = self.q
        for k in range(self.hyper.r):
            mk = st.loadings[:, k]
            fk = st.scores[k]
            if st.indicators[k] == 0:
                st.loadings[:, k] = rng.standard_normal(q) / math.sqrt(q)
                continue
            ytil = self.resid + np.outer(mk, fk)
            sum_f2 = float(fk @ fk)
            prec = s_inv * sum_f2 + q * np.eye(q)
            try:
                chol = cho_factor(prec, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                jitter = 1e-10 * max(np.trace(prec) / q, 1.0)
                logger.warning("loadings precision factorization failed; jitter %.2e", jitter)
                chol = cho_factor(prec + jitter * np.eye(q), lower=True, check_finite=False)
            mean = cho_solve(chol, s_inv @ (ytil @ fk), check_finite=False)
            noise = solve_triangular(
                chol[0].T, rng.standard_normal(q), lower=False, check_finite=False
            )
            st.loadings[:, k] = mean + noise
            self.resid = ytil - np.outer(st.loadings[:, k], fk)

    def update_scores(self, s_inv: np.ndarray, rng: np.random.Generator) -> None:
        st = self.state
        for k in range(self.hyper.r):
            mk = st.loadings[:, k]
            if st.indicators[k] == 0:
                st.scores[k] = math.sqrt(st.variances[k]) * rng.standard_normal(self.n)
                continue
            ytil = self.resid + np.outer(mk, st.scores[k])
            u = s_inv @ mk
            var = 1.0 / (float(mk @ u) + 1.0 / st.variances[k])
            mean = var * (u @ ytil)
            st.scores[k] = mean + math.sqrt(var) * rng.standard_normal(self.n)
            self.resid = ytil - np.outer(mk, st.scores[k])

    def indicator_logit(self, k: int, s_inv: np.ndarray) -> float:
        """Log-odds of ``z_k = 1`` with the factor scores integrated out."""
        st = self.state
        pk = st.inclusion_probs[k]
        if pk <= 0.0:
            return -math.inf
        if pk >= 1.0:
            return math.inf
        mk = st.loadings[:, k]
        ytil = self.resid + float(st.indicators[k]) * np.outer(mk, st.scores[k])
        u = s_inv @ mk
        var = 1.0 / (float(mk @ u) + 1.0 / st.variances[k])
        mean = var * (u @ ytil)
        log_bayes = 0.5 * self.n * (math.log(var) - math.log(st.variances[k]))
        log_bayes += 0.5 * float(mean @ mean) / var
        return math.log(pk) - math.log1p(-pk) + log_bayes

    def update_indicators(self, s_inv: np.ndarray, rng: np.random.Generator) -> None:
        """Resample each indicator from its scores-marginalized conditional.

        Because the Bernoulli draw integrates the scores row out, the pair
        ``(z_k, f_k)`` must be refreshed together whenever the indicator
        flips; keeping the stale row would leave the chain targeting the
        wrong joint distribution.
        """
        st = self.state
        for k in range(self.hyper.r):
            z_new = _bernoulli_from_logit(self.indicator_logit(k, s_inv), rng)
            if z_new == int(st.indicators[k]):
                continue
            mk = st.loadings[:, k]
            ytil = self.resid + float(st.indicators[k]) * np.outer(mk, st.scores[k])
            if z_new == 1:
                u = s_inv @ mk
                var = 1.0 / (float(mk @ u) + 1.0 / st.variances[k])
                st.scores[k] = var * (u @ ytil) + math.sqrt(var) * rng.standard_normal(self.n)
                self.resid = ytil - np.outer(mk, st.scores[k])
            else:
                st.scores[k] = math.sqrt(st.variances[k]) * rng.standard_normal(self.n)
                self.resid = ytil
            st.indicators[k] = z_new

    def update_inclusion_probs(self, rng: np.random.Generator) -> None:
        st = self.state
        h = self.hyper
        for k in range(h.r):
            if st.indicators[k] == 1:
                st.inclusion_probs[k] = rng.beta(h.a_p + 1.0, h.b_p)
            else:
                weight = 1.0 if self.disable_point_mass else pi_star(st.pi, h.a_p, h.b_p)
                if rng.random() < weight:
                    st.inclusion_probs[k] = rng.beta(h.a_p, h.b_p + 1.0)
                else:
                    st.inclusion_probs[k] = 0.0
        at_zero = int(np.count_nonzero(st.inclusion_probs == 0.0))
        st.pi = float(rng.beta(h.a_pi + at_zero, h.b_pi + (h.r - at_zero)))

    def update_factor_variances(self, rng: np.random.Generator) -> None:
        st = self.state
        h = self.hyper
        for k in range(h.r):
            if st.indicators[k] == 1:
                shape = h.a_tau + 0.5 * self.n
                scale = h.b_tau + 0.5 * float(st.scores[k] @ st.scores[k])
            else:
                shape, scale = h.a_tau, h.b_tau
            st.variances[k] = scale / rng.gamma(shape)

    def sweep(self, s_inv: np.ndarray, rng: np.random.Generator) -> None:
        self.update_loadings(s_inv, rng)
        self.update_scores(s_inv, rng)
        self.update_indicators(s_inv, rng)
        self.update_inclusion_probs(rng)
        self.update_factor_variances(rng)


class LrsdSampler:
    """Full sampler for the low-rank plus sparse covariance decomposition."""

    def __init__(
        self,
        data: ObservationMatrix,
        hyper: Hyperparameters,
        rng: np.random.Generator,
        grid_count: int = 100,
        disable_point_mass: bool = False,
    ):
        self.grid_count = int(grid_count)
        self.disable_point_mass = disable_point_mass
        self.factor = FactorBlock(data.data, hyper, rng, disable_point_mass)
        self.hyper = hyper
        q = self.factor.q
        sample_var = np.clip(np.var(data.data, axis=1), 1e-8, None)
        rho0 = 1.0 if disable_point_mass else 0.5
        self.sparse = SparseState(
            S=np.diag(sample_var), lam=1.0, rho=np.full((q, q), rho0)
        )
        self.S_inv = np.diag(1.0 / sample_var)
        self.events = {"gig_clamped": 0, "offdiag_recentered": 0, "offdiag_skipped": 0}
        self.offdiag_attempts = 0
        self.offdiag_accepts = 0
        # midpoint/breakpoint templates on (-1, 1), rescaled per entry
        self._grid_unit = np.linspace(-1.0, 1.0, self.grid_count + 1)
        self._mids_unit = 0.5 * (self._grid_unit[:-1] + self._grid_unit[1:])

    @property
    def q(self) -> int:
        return self.factor.q

    @property
    def n(self) -> int:
        return self.factor.n

    def refresh_derived(self) -> None:
        """Recompute residuals and ``S^-1`` after direct state edits."""
        self.factor.refresh_residuals()
        self._refresh_s_inv()

    def _refresh_s_inv(self) -> None:
        chol = cho_factor(self.sparse.S, lower=True, check_finite=False)
        self.S_inv = cho_solve(chol, np.eye(self.q), check_finite=False)

    def scatter(self) -> ResidualScatter:
        return ResidualScatter.from_residuals(self.factor.resid)

    # -- sparse component updates ---------------------------------------

    def update_sparse_diagonal(
        self, rng: np.random.Generator, scatter: ResidualScatter | None = None
    ) -> None:
        lam_mat = (scatter or self.scatter()).Lambda
        self._refresh_s_inv()
        s = self.sparse.S
        t = self.S_inv
        order = 1.0 - 0.5 * self.n
        for j in range(self.q):
            tjj = t[j, j]
            shift = s[j, j] - 1.0 / tjj
            w = t[j] / tjj
            d = float(w @ lam_mat @ w)
            if d <= 0.0 or not math.isfinite(d):
                self.events["gig_clamped"] += 1
                d = 1e-12 * max(1.0, lam_mat[j, j])
            nu = sample_gig(GigParams(order, d, self.sparse.lam), rng)
            delta = shift + nu - s[j, j]
            s[j, j] = shift + nu
            col = t[:, j].copy()
            t -= (delta / (1.0 + delta * tjj)) * np.outer(col, col)

    def _log_target_offdiag(self, nu, ab, b_d00_a_d11, d01, lam, center):
        """Log of the continuous conditional factor g at nu (vectorized)."""
        ratio = nu * nu / ab
        return (
            -0.5 * self.n * np.log1p(-ratio)
            - (b_d00_a_d11 - 2.0 * d01 * nu) / (2.0 * (ab - nu * nu))
            - lam * np.abs(nu + center)
        )

    def _log_target_scalar(self, nu, ab, b_d00_a_d11, d01, lam, center):
        nu2 = nu * nu
        return (
            -0.5 * self.n * math.log1p(-nu2 / ab)
            - (b_d00_a_d11 - 2.0 * d01 * nu) / (2.0 * (ab - nu2))
            - lam * abs(nu + center)
        )

    def update_sparse_offdiagonal(
        self, rng: np.random.Generator, scatter: ResidualScatter | None = None
    ) -> None:
        lam_mat = (scatter or self.scatter()).Lambda
        self._refresh_s_inv()
        s = self.sparse.S
        t = self.S_inv
        lam = self.sparse.lam
        n = self.n
        for j in range(self.q - 1):
            for jp in range(j + 1, self.q):
                self.offdiag_attempts += 1
                v00, v01, v11 = t[j, j], t[j, jp], t[jp, jp]
                det_v = v00 * v11 - v01 * v01
                if det_v <= 0.0 or not math.isfinite(det_v):
                    self.events["offdiag_skipped"] += 1
                    logger.warning("skipping off-diagonal (%d,%d): S^-1 block degenerate", j, jp)
                    continue
                a = v11 / det_v
                b = v00 / det_v
                nu_cur = -v01 / det_v
                center = s[j, jp] - nu_cur  # B_12
                # D = V^-1 (P Lambda P^T) V^-1 with P the (j, j') rows of S^-1
                pj = t[j]
                pjp = t[jp]
                lpj = lam_mat @ pj
                e00 = float(pj @ lpj)
                e01 = float(pjp @ lpj)
                e11 = float(pjp @ (lam_mat @ pjp))
                d00 = a * (a * e00 + nu_cur * e01) + nu_cur * (a * e01 + nu_cur * e11)
                d01 = a * (nu_cur * e00 + b * e01) + nu_cur * (nu_cur * e01 + b * e11)
                d11 = nu_cur * (nu_cur * e00 + b * e01) + b * (nu_cur * e01 + b * e11)
                ab = a * b
                bound = math.sqrt(ab)
                lin = b * d00 + a * d11

                mids = bound * self._mids_unit
                log_g_mids = self._log_target_offdiag(mids, ab, lin, d01, lam, center)
                rho = self.sparse.rho[j, jp]
                log_cont = log_g_mids + (math.log(rho * lam / 2.0) if rho > 0 else -np.inf)
                atom = -center
                if rho < 1.0 and atom * atom < ab:
                    log_atom = math.log1p(-rho) + self._log_target_scalar(
                        atom, ab, lin, d01, lam, center
                    )
                else:
                    log_atom = -np.inf
                try:
                    proposal = PiecewiseProposal.from_log_weights(
                        bound * self._grid_unit, log_cont, atom, log_atom
                    )
                except ValueError:
                    self.events["offdiag_skipped"] += 1
                    continue
                nu_star = sample_piecewise_mixture(proposal, rng)

                star_atom = nu_star == atom and math.isfinite(log_atom)
                cur_atom = s[j, jp] == 0.0
                log_ratio = 0.0
                if not star_atom:
                    k_star = proposal.interval_of(nu_star)
                    log_ratio += self._log_target_scalar(
                        nu_star, ab, lin, d01, lam, center
                    ) - float(log_g_mids[k_star])
                if not cur_atom:
                    if nu_cur * nu_cur >= ab or not math.isfinite(nu_cur):
                        # numerically outside the admissible interval: force a move back in
                        self.events["offdiag_recentered"] += 1
                    else:
                        k_cur = proposal.interval_of(nu_cur)
                        log_ratio -= self._log_target_scalar(
                            nu_cur, ab, lin, d01, lam, center
                        ) - float(log_g_mids[k_cur])
                if log_ratio >= 0.0 or math.log(1.0 - rng.random()) < log_ratio:
                    new_val = 0.0 if star_atom else nu_star + center
                    delta = new_val - s[j, jp]
                    s[j, jp] = s[jp, j] = new_val
                    if delta != 0.0:
                        self._rank_two_inverse_update(j, jp, delta, v00, v01, v11)
                    self.offdiag_accepts += 1

    def _rank_two_inverse_update(self, j, jp, delta, v00, v01, v11):
        """Update ``S^-1`` after adding delta to the symmetric pair (j, j')."""
        t = self.S_inv
        one = 1.0 + delta * v01
        det2 = one * one - delta * delta * v00 * v11
        g00 = -delta * delta * v11 / det2
        g01 = delta * one / det2
        g11 = -delta * delta * v00 / det2
        cols = t[:, (j, jp)].copy()
        cj = cols[:, 0]
        cjp = cols[:, 1]
        right = np.column_stack((g00 * cj + g01 * cjp, g01 * cj + g11 * cjp))
        t -= cols @ right.T
        # tiny float asymmetry is tolerated here; the factorization refresh at
        # the top of each sweep resets it
        t += t.T
        t *= 0.5

    def update_lambda(self, rng: np.random.Generator) -> None:
        shape, rate = lambda_posterior_params(
            self.sparse.S, self.hyper.a_lambda, self.hyper.b_lambda
        )
        self.sparse.lam = float(rng.gamma(shape, 1.0 / rate))

    def update_rho(self, rng: np.random.Generator) -> None:
        if self.disable_point_mass:
            return
        q = self.q
        iu = np.triu_indices(q, k=1)
        nonzero = self.sparse.S[iu] != 0.0
        draws = rng.beta(self.hyper.a_rho + nonzero, self.hyper.b_rho + ~nonzero)
        rho = self.sparse.rho
        rho[iu] = draws
        rho.T[iu] = draws

    def sweep(self, rng: np.random.Generator) -> None:
        self.factor.sweep(self.S_inv, rng)
        scatter = self.scatter()
        self.update_sparse_diagonal(rng, scatter)
        self.update_sparse_offdiagonal(rng, scatter)
        self.update_lambda(rng)
        self.update_rho(rng)

    def low_rank_matrix(self) -> np.ndarray:
        return self.factor.state.low_rank_matrix()


def run_chain(
    data: ObservationMatrix,
    hyper: Hyperparameters,
    config: ChainConfig,
    *,
    disable_point_mass: bool = False,
    progress: bool = False,
) -> ChainOutput:
    """Run the full sampler and collect thinned draws.

    Deterministic given ``config.seed``. Draws of the indicator vector,
    factor variances, loadings, sparse component, shrinkage rate, and the
    derived low-rank and total covariance are stored.
    """
    rng = np.random.default_rng(config.seed)
    sampler = LrsdSampler(
        data, hyper, rng, grid_count=config.grid_count,
        disable_point_mass=disable_point_mass,
    )
    q, r = sampler.q, hyper.r
    stored = config.stored
    draws = {
        "z": np.empty((stored, r), dtype=np.int64),
        "tau2": np.empty((stored, r)),
        "M": np.empty((stored, q, r)),
        "S": np.empty((stored, q, q)),
        "lambda": np.empty(stored),
        "Sigma": np.empty((stored, q, q)),
        "L": np.empty((stored, q, q)),
    }
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
            draws["S"][idx] = sampler.sparse.S
            draws["lambda"][idx] = sampler.sparse.lam
            low_rank = st.low_rank_matrix()
            draws["L"][idx] = low_rank
            draws["Sigma"][idx] = low_rank + sampler.sparse.S
            idx += 1
        if progress and (it + 1) % 500 == 0:
            import sys

            print(f"[lrsd] iteration {it + 1}/{total}", file=sys.stderr)

    freq = (draws["S"] != 0.0).mean(axis=0)
    np.fill_diagonal(freq, 0.0)
    histogram = np.bincount(draws["z"].sum(axis=1), minlength=r + 1)
    meta = {
        "variant": "lrsd",
        "seed": config.seed,
        "config": {
            "burn_in": config.burn_in,
            "samples": config.samples,
            "thin": config.thin,
            "grid_count": config.grid_count,
        },
        "q": q,
        "n": sampler.n,
        "r": r,
        "events": dict(sampler.events),
        "offdiag_acceptance": (
            sampler.offdiag_accepts / sampler.offdiag_attempts
            if sampler.offdiag_attempts
            else float("nan")
        ),
    }
    return ChainOutput(draws=draws, inclusion_freq=freq, rank_histogram=histogram, meta=meta)
