"""
Recursive marginal and product Markovian quantization

Builds one quantization grid per time step: every dimension's one-step
update law is a mixture over the previous step's joint codewords, each
marginal is quantized on its own, and the product grid receives its joint
weights from the component-wise transition probabilities.
"""

import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.special import ndtr

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.config import WEIGHT_RENORMALIZE_TOL
from src.errors import ConfigurationError, InvalidGridError, UnsupportedLawError
from src.models.sde_models import euler_coeffs, wo2_coeffs
from src.quantization.mixture_dists import (
    GaussianMixture,
    JointLaw2D,
    Wo2Mixture,
    censor,
)
from src.quantization.quantize_core import (
    Grid1D,
    OptimizerConfig,
    distortion,
    optimize_grid,
    outer_edges,
    quantile_grid,
)

logger = logging.getLogger(__name__)

SCHEMES = ('euler', 'wo2')


@dataclass
class ProductGridStep:
    """
    Product grid of one time step

    `weights` is a tensor of shape (N^1, ..., N^d); `transition` maps the
    previous step's flattened joint codewords (rows) onto this step's (columns).
    """
    index: int
    grids: tuple
    weights: np.ndarray
    transition: Optional[np.ndarray] = None
    marginals: tuple = field(default=(), repr=False)
    distortions: tuple = ()

    @property
    def shape(self):
        return tuple(g.size for g in self.grids)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def dim(self):
        return len(self.grids)

    @property
    def codewords(self):
        """Joint codewords as an array of shape (d, size), C-order over the tensor"""
        mesh = np.meshgrid(*[g.codewords for g in self.grids], indexing='ij')
        return np.array([axis.ravel() for axis in mesh])

    @property
    def flat_weights(self):
        return self.weights.ravel()

    def marginal_weights(self, n):
        axes = tuple(i for i in range(self.dim) if i != n)
        return self.weights.sum(axis=axes) if axes else self.weights.copy()

    @property
    def diagnostics(self):
        return tuple(g.info for g in self.grids)


@dataclass
class GridSequence:
    """Product grids for steps 0..K plus the model, schedule and schemes that built them"""
    model: object
    schedule: object
    schemes: tuple
    steps: List[ProductGridStep] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def __getitem__(self, k):
        return self.steps[k]

    def __iter__(self):
        return iter(self.steps)

    @property
    def dt(self):
        return self.schedule.dt

    @property
    def fallback_count(self):
        return sum(
            1 for step in self.steps for info in step.diagnostics if info is not None and info.fell_back
        )

    def summary(self):
        """
        One row per (step, dimension) with the optimizer diagnostics and
        the probability-conservation residuals of the step
        """
        rows = []
        for step in self.steps:
            weight_residual = abs(step.weights.sum() - 1.0)
            row_residual = (
                float(np.max(np.abs(step.transition.sum(axis=1) - 1.0)))
                if step.transition is not None else 0.0
            )
            for n, grid in enumerate(step.grids):
                info = grid.info
                rows.append({
                    'step': step.index,
                    'dim': n + 1,
                    'scheme': self.schemes[n],
                    'codewords': grid.size,
                    'distortion': step.distortions[n] if step.distortions else 0.0,
                    'converged': info.converged if info else True,
                    'newton_iterations': info.newton_iterations if info else 0,
                    'lloyd_iterations': info.lloyd_iterations if info else 0,
                    'fallback': info.fallback_reason if info and info.fell_back else '',
                    'empty_region_merges': info.empty_region_merges if info else 0,
                    'weight_sum_residual': weight_residual,
                    'transition_row_residual': row_residual,
                })
        return pd.DataFrame(rows)


def _check_schemes(model, schemes):
    schemes = tuple(s.lower() for s in (schemes or ('euler',) * model.dim))
    if len(schemes) != model.dim:
        raise ConfigurationError(f"Expected {model.dim} scheme tags, got {len(schemes)}")
    for n, scheme in enumerate(schemes):
        if scheme not in SCHEMES:
            raise ConfigurationError(f"Unknown scheme: {scheme}")
        if scheme == 'wo2' and not model.autonomous[n]:
            raise ConfigurationError(
                f"WO2 needs dimension {n + 1} of {model.name} to depend on its own coordinate only"
            )
    return schemes


def initial_step(model):
    """Step 0: a point mass at x0"""
    x0 = model.x0
    grids = tuple(
        Grid1D([x0[n]], [1.0], (model.lower_bounds[n], np.inf)) for n in range(model.dim)
    )
    return ProductGridStep(0, grids, np.ones((1,) * model.dim), distortions=(0.0,) * model.dim)


def component_laws(model, step, dt, schemes):
    """
    One-step update law of every dimension as a mixture over the joint codewords of `step`

    Returns:
    --------
    tuple
        Per dimension a GaussianMixture or Wo2Mixture, censored at the model's lower bound
    """
    X = step.codewords
    p = np.clip(step.flat_weights, 0.0, None)
    p = p / p.sum()
    laws = []
    for n, scheme in enumerate(schemes):
        if scheme == 'wo2':
            mbar, cbar, lam = wo2_coeffs(model, X[n], n, dt)
            law = Wo2Mixture(mbar, cbar, lam, p)
        else:
            c, m = euler_coeffs(model, X, n, dt, allow_point_mass=True)
            law = GaussianMixture(c, m, p)
        laws.append(censor(law, model.lower_bounds[n]))
    return tuple(laws)


def marginal_laws(model, step, dt, schemes, laws=None):
    """
    Laws the marginal grids are optimized against

    An autonomous dimension's update depends on its own coordinate only, so its
    mixture runs over that dimension's codewords and weights instead of the
    joint ones; the other dimensions keep the joint mixtures of `laws`.
    """
    laws = laws if laws is not None else component_laws(model, step, dt, schemes)
    out = []
    for n, scheme in enumerate(schemes):
        if not model.autonomous[n] or step.dim == 1:
            out.append(laws[n])
            continue
        grid = step.grids[n]
        p = grid.weights if grid.weights is not None else step.marginal_weights(n)
        p = np.clip(p, 0.0, None)
        p = p / p.sum()
        if scheme == 'wo2':
            mbar, cbar, lam = wo2_coeffs(model, grid.codewords, n, dt)
            law = Wo2Mixture(mbar, cbar, lam, p)
        else:
            X = np.repeat(model.x0[:, None], grid.size, axis=1)
            X[n] = grid.codewords
            c, m = euler_coeffs(model, X, n, dt, allow_point_mass=True)
            law = GaussianMixture(c, m, p)
        out.append(censor(law, model.lower_bounds[n]))
    return tuple(out)


def _component_region_probs(law, grid):
    """P(component i lands in region j) for a single dimension, shape (components, N)"""
    lo, hi = law.z_interval(outer_edges(grid.codewords))
    return np.diff(ndtr(hi) - ndtr(lo), axis=1)


def _normalize_rows(T):
    np.clip(T, 0.0, None, out=T)
    sums = T.sum(axis=1)
    deviation = float(np.max(np.abs(sums - 1.0)))
    if deviation > WEIGHT_RENORMALIZE_TOL:
        logger.info("Renormalizing transition rows (max deviation %.3e)", deviation)
    T /= sums[:, None]
    return T


def transition_matrix(laws, grids, correlation):
    """
    Row-stochastic matrix of P(next joint region j | previous joint codeword i)

    Parameters:
    -----------
    laws : tuple
        Per-dimension component laws from component_laws
    grids : tuple of Grid1D
        Marginal grids of the next step
    correlation : np.ndarray
        Correlation matrix of the Brownian drivers

    Returns:
    --------
    np.ndarray
        Array of shape (previous size, next size)
    """
    d = len(grids)
    corr = np.asarray(correlation, dtype=float)
    off = corr[~np.eye(d, dtype=bool)]

    if d == 1 or np.all(off == 0.0):
        T = _component_region_probs(laws[0], grids[0])
        for law, grid in zip(laws[1:], grids[1:]):
            P = _component_region_probs(law, grid)
            T = (T[:, :, None] * P[:, None, :]).reshape(T.shape[0], -1)
    elif d == 2:
        joint = JointLaw2D(laws[0], laws[1], float(corr[0, 1]))
        T = joint.component_rectangles(
            outer_edges(grids[0].codewords), outer_edges(grids[1].codewords)
        ).reshape(len(laws[0]), -1)
    else:
        raise UnsupportedLawError("Correlated joint laws are only available in two dimensions")
    return _normalize_rows(T)


def joint_weights(prev_weights, transition, shape):
    """
    Joint weight tensor of the next step, p_{k+1} = p_k^T T

    Negative round-off is clipped; the tensor is renormalized only when its
    total deviates from one by more than WEIGHT_RENORMALIZE_TOL.
    """
    w = np.asarray(prev_weights, dtype=float).ravel() @ transition
    np.clip(w, 0.0, None, out=w)
    total = w.sum()
    if abs(total - 1.0) > WEIGHT_RENORMALIZE_TOL:
        logger.info("Renormalizing joint weights (total %.12f)", total)
        w = w / total
    return w.reshape(shape)


def _initial_grid(previous, law, size):
    lo, hi = law.support
    if previous.size == size and previous.codewords[0] >= lo and previous.codewords[-1] <= hi:
        return Grid1D(previous.codewords, support=(lo, hi))
    return quantile_grid(law, size)


def _quantize_dimension(args):
    previous, law, size, cfg = args
    init = _initial_grid(previous, law, size)
    try:
        return optimize_grid(init, law, cfg)
    except InvalidGridError:
        logger.debug("Warm start rejected; restarting from quantiles")
        return optimize_grid(quantile_grid(law, size), law, cfg)


def pmq(model, schedule, schemes=None, cfg=None, threads=1):
    """
    Product Markovian quantization of a d-dimensional model

    Parameters:
    -----------
    model : SdeModel
        Diffusion to quantize
    schedule : Schedule
        Horizon, step count and codewords per dimension
    schemes : sequence of str, optional
        'euler' or 'wo2' per dimension; WO2 needs an autonomous dimension
    cfg : OptimizerConfig, optional
        Settings of the marginal optimizer
    threads : int
        Worker threads for the per-dimension optimizations of a step

    Returns:
    --------
    GridSequence
        Steps 0..K; step 0 is the point mass at x0
    """
    schemes = _check_schemes(model, schemes)
    cfg = cfg or OptimizerConfig()
    sizes = schedule.sizes
    if len(sizes) == 1 and model.dim > 1:
        sizes = sizes * model.dim
    if len(sizes) != model.dim:
        raise ConfigurationError(f"Schedule gives {len(sizes)} grid sizes for a {model.dim}-D model")

    dt = schedule.dt
    sequence = GridSequence(model, schedule, schemes, [initial_step(model)])
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for k in range(schedule.steps):
            step = sequence.steps[-1]
            laws = component_laws(model, step, dt, schemes)
            targets = marginal_laws(model, step, dt, schemes, laws)
            jobs = [(step.grids[n], targets[n], sizes[n], cfg) for n in range(model.dim)]
            if executor is not None:
                grids = tuple(executor.map(_quantize_dimension, jobs))
            else:
                grids = tuple(_quantize_dimension(job) for job in jobs)

            T = transition_matrix(laws, grids, model.correlation)
            weights = joint_weights(step.weights, T, tuple(g.size for g in grids))
            distortions = tuple(distortion(g, law) for g, law in zip(grids, targets))
            sequence.steps.append(ProductGridStep(k + 1, grids, weights, T, targets, distortions))
            logger.debug("Step %d/%d built (sizes %s)", k + 1, schedule.steps, tuple(g.size for g in grids))
    finally:
        if executor is not None:
            executor.shutdown()

    if sequence.fallback_count:
        logger.info("%d marginal optimizations fell back to Lloyd iterations", sequence.fallback_count)
    return sequence


def rmq_1d(model, schedule, scheme='euler', cfg=None):
    """Recursive marginal quantization of a scalar model"""
    if model.dim != 1:
        raise ConfigurationError(f"rmq_1d needs a scalar model, got dimension {model.dim}")
    return pmq(model, schedule, (scheme,), cfg)


def build_grids(model, schedule, schemes=None, cfg=None, threads=1):
    """Entry point used by pricing and calibration: rmq_1d for scalar models, pmq otherwise"""
    if model.dim == 1:
        scheme = (schemes or ('euler',))[0]
        return rmq_1d(model, schedule, scheme, cfg)
    return pmq(model, schedule, schemes, cfg, threads)


if __name__ == "__main__":
    from src.config import GBM2D_SCHEDULE
    from src.models.sde_models import Schedule, builtin_models

    model = builtin_models()['gbm2d']
    horizon, steps, sizes = GBM2D_SCHEDULE
    print("Building 2-asset GBM product grid...")
    grids = pmq(model, Schedule(horizon, steps, sizes))
    print("✓ Done")
    print(grids.summary().tail(4).to_string(index=False))
    final = grids[-1]
    print(f"\nE[X_T] per asset: {final.codewords @ final.flat_weights}")
    print(f"x0 * exp(rT):     {model.x0 * np.exp(model.rate * horizon)}")
