"""Shared independent oracles: quadrature and convergence diagnostics.

Nothing in here calls into the samplers under test.
"""

import math

import numpy as np
from scipy import integrate


def gig_moment_by_quadrature(order, chi, psi, power):
    """E[x^power] for the GIG density by adaptive quadrature, mode-shifted."""
    mode = ((order - 1) + math.sqrt((order - 1) ** 2 + chi * psi)) / psi
    mode = max(mode, 1e-12)

    def log_f(x):
        return (order - 1) * math.log(x) - 0.5 * (chi / x + psi * x)

    shift = log_f(mode)

    def integrand(x, k):
        return math.exp(log_f(x) - shift + k * math.log(x))

    split = 20.0 * mode

    def full(k):
        head, _ = integrate.quad(
            integrand, 0, split, args=(k,), points=[mode / 10, mode, mode * 10],
            limit=300,
        )
        tail, _ = integrate.quad(integrand, split, np.inf, args=(k,), limit=300)
        return head + tail

    return full(power) / full(0)


def offdiag_conditional_oracle(s00, s11, lam_mat, lam, rho, n, moments=(1, 2)):
    """Atom probability and conditional moments of the q=2 off-diagonal target.

    For a 2x2 sparse covariance with fixed diagonal, the conditional of the
    off-diagonal s is an atom at 0 mixed with
    ``g(s) = (1 - s^2/(ab))^(-n/2) exp(-(b L00 + a L11 - 2 L01 s)/(2(ab - s^2))
    - lam |s|)`` on ``s^2 < ab`` where a, b are the diagonal entries.
    Returns (P(atom), {k: E[s^k | not atom]}).
    """
    a, b = s00, s11
    ab = a * b
    bound = math.sqrt(ab)
    lin = b * lam_mat[0, 0] + a * lam_mat[1, 1]

    def log_g(s):
        return (
            -0.5 * n * math.log1p(-s * s / ab)
            - (lin - 2.0 * lam_mat[0, 1] * s) / (2.0 * (ab - s * s))
            - lam * abs(s)
        )

    shift = log_g(0.0)

    def integrand(s, k):
        return math.exp(log_g(s) - shift) * s**k

    eps = bound * 1e-9
    norm, _ = integrate.quad(integrand, -bound + eps, bound - eps, args=(0,), limit=300)
    atom_weight = (1.0 - rho) * 1.0  # exp(log_g(0) - shift) = 1 at the shift point
    cont_weight = rho * lam / 2.0 * norm
    p_atom = atom_weight / (atom_weight + cont_weight)
    out = {}
    for k in moments:
        num, _ = integrate.quad(integrand, -bound + eps, bound - eps, args=(k,), limit=300)
        out[k] = num / norm
    return p_atom, out


def gelman_rubin(chains):
    """Split-chain potential scale reduction factor for a scalar summary."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    half = n // 2
    split = chains[:, : 2 * half].reshape(2 * m, half)
    means = split.mean(axis=1)
    b = half * means.var(ddof=1)
    w = split.var(axis=1, ddof=1).mean()
    var_plus = (half - 1) / half * w + b / half
    return math.sqrt(var_plus / w)
