"""Bayesian covariance estimation via low-rank plus sparse decomposition.

The package fits a latent factor model with a spike-and-slab prior on the
factor indicators, combined with one of three residual-covariance models:

* ``lrsd``: sparse covariance with exact-zero selection (Bayesian lasso
  with point masses),
* ``gfm-hiw``: hyper-inverse Wishart residuals Markov to a decomposable
  graph learned by collapsed MCMC,
* ``gfm-lasso``: sparse precision matrix with exact-zero selection for
  unrestricted graphs.
"""

__version__ = "0.1.0"
