"""Intent-aware report recommendation toolkit.

Combines per-user Markov navigation graphs with context-based intent scoring
(PARAFAC2 factorization, Kalman-filtered latent factors, pairwise rank
learning) to produce ranked top-k report recommendations.
"""

__version__ = "0.1.0"
