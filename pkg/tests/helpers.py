"""
Random test instances
"""

import numpy as np

from src.quantization.mixture_dists import GaussianMixture


def random_mixture(rng, max_components=8, spread=2.0, scales=(0.2, 1.5)):
    """Gaussian mixture with random locations, scales and Dirichlet weights"""
    n = int(rng.integers(1, max_components + 1))
    c = rng.normal(0.0, spread, n)
    m = rng.uniform(*scales, n)
    p = rng.dirichlet(np.ones(n))
    p = p / p.sum()
    return GaussianMixture(c, m, p)


def random_grid(rng, dist, n):
    """Strictly increasing grid spread over the bulk of a distribution"""
    mu, sd = dist.mean, np.sqrt(dist.variance)
    while True:
        x = np.sort(rng.uniform(mu - 2.5 * sd, mu + 2.5 * sd, n))
        if n == 1 or np.min(np.diff(x)) > 1e-3 * sd:
            return x
