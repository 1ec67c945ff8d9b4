"""
One-dimensional optimal quantization

Distortion, gradient and tridiagonal Hessian in closed form from (F, f, M1, M2),
Lloyd and Newton-Raphson steps, Anderson acceleration of the Lloyd map, and the
hybrid optimizer that starts with Newton-Raphson and falls back to accelerated
Lloyd iterations when the Newton iteration becomes unstable.
"""

import logging
import sys
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.config import (
    ATOM_ANDERSON_DEPTH,
    ATOM_LLOYD_FACTOR,
    NR_MAX_ITERS,
    LLOYD_MAX_ITERS,
    GRAD_TOL,
    COND_THRESHOLD,
    ANDERSON_DEPTH,
    ANDERSON_RIDGE,
    EMPTY_REGION_MASS,
    ROUNDOFF_FACTOR,
    WEIGHT_SUM_TOL,
)
from src.errors import (
    InvalidGridError,
    InvalidInitError,
    EmptyRegionError,
    SingularHessianError,
    StepRejectedError,
)

logger = logging.getLogger(__name__)

STRATEGIES = ('hybrid', 'newton', 'lloyd')


class Distribution1D(ABC):
    """
    Scalar law exposed through its distribution function F, density f and
    lower partial expectations M1(x) = E[X 1{X<x}], M2(x) = E[X^2 1{X<x}].

    Every implementation must accept arguments outside its support:
    F and M1, M2 are 0 below the support and take their full values above it.
    """

    support: Tuple[float, float] = (-np.inf, np.inf)

    @abstractmethod
    def cdf(self, x):
        ...

    @abstractmethod
    def pdf(self, x):
        ...

    @abstractmethod
    def lpe1(self, x):
        ...

    @abstractmethod
    def lpe2(self, x):
        ...

    @property
    def has_atoms(self):
        """True when the law puts positive mass on single points"""
        return False

    @property
    def mean(self):
        return float(self.lpe1(np.inf))

    @property
    def variance(self):
        return max(float(self.lpe2(np.inf)) - self.mean ** 2, 0.0)


@dataclass
class QuantizerDiagnostics:
    """What happened inside one call of optimize_grid"""
    converged: bool = False
    newton_iterations: int = 0
    lloyd_iterations: int = 0
    fallback_reason: Optional[str] = None
    empty_region_merges: int = 0
    gradient_norm: float = np.nan

    @property
    def fell_back(self):
        return self.fallback_reason is not None and self.lloyd_iterations > 0


@dataclass(frozen=True)
class Grid1D:
    """
    Scalar quantizer: strictly increasing codewords, optional weights and the
    support [lo, hi] of the quantized variable.
    """
    codewords: np.ndarray
    weights: Optional[np.ndarray] = None
    support: Tuple[float, float] = (-np.inf, np.inf)
    info: Optional[QuantizerDiagnostics] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        x = np.array(self.codewords, dtype=float).ravel()
        lo, hi = float(self.support[0]), float(self.support[1])
        if x.size == 0:
            raise InvalidGridError("A grid needs at least one codeword")
        if not np.all(np.isfinite(x)):
            raise InvalidGridError("Codewords must be finite")
        if np.any(np.diff(x) <= 0.0):
            raise InvalidGridError(f"Codewords are not strictly increasing: {x}")
        if x[0] < lo or x[-1] > hi:
            raise InvalidGridError(f"Codewords leave the support [{lo}, {hi}]")
        object.__setattr__(self, 'codewords', x)
        object.__setattr__(self, 'support', (lo, hi))

        if self.weights is not None:
            w = np.array(self.weights, dtype=float).ravel()
            if w.shape != x.shape:
                raise InvalidGridError("Weights and codewords differ in length")
            if np.any(w < 0.0) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
                raise InvalidGridError(f"Weights must be a probability vector (sum={w.sum()!r})")
            object.__setattr__(self, 'weights', w)

    @property
    def size(self):
        return self.codewords.size

    def __len__(self):
        return self.size


@dataclass(frozen=True)
class OptimizerConfig:
    """
    Settings of the hybrid optimizer

    Parameters:
    -----------
    nr_max_iters : int
        Newton-Raphson iteration budget
    lloyd_max_iters : int
        Lloyd iteration budget after a fallback
    grad_tol : float
        Convergence threshold on max |dD/dx_i|, relative to the initial gradient
    cond_threshold : float
        Lower bound on the reciprocal condition number of the Hessian
    anderson_depth : int
        History length for Anderson mixing
    anderson_ridge : float
        Ridge factor of the Anderson least-squares problem
    strategy : str
        'hybrid' (default), 'newton' or 'lloyd'
    accelerate : bool
        Apply Anderson acceleration to the Lloyd iterations
    """
    nr_max_iters: int = NR_MAX_ITERS
    lloyd_max_iters: int = LLOYD_MAX_ITERS
    grad_tol: float = GRAD_TOL
    cond_threshold: float = COND_THRESHOLD
    anderson_depth: int = ANDERSON_DEPTH
    anderson_ridge: float = ANDERSON_RIDGE
    strategy: str = 'hybrid'
    accelerate: bool = True

    def __post_init__(self):
        for name in ('nr_max_iters', 'lloyd_max_iters', 'anderson_depth'):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.grad_tol > 0.0:
            raise ValueError("grad_tol must be positive")
        if not 0.0 < self.cond_threshold < 1.0:
            raise ValueError("cond_threshold must lie in (0, 1)")
        if self.anderson_ridge < 0.0:
            raise ValueError("anderson_ridge must be non-negative")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"Unknown strategy: {self.strategy}")


# ---------------------------------------------------------------------------
# Region quantities
# ---------------------------------------------------------------------------

def outer_edges(x):
    """Midpoints padded with -inf/+inf; region i is (e[i], e[i+1]]"""
    return np.concatenate(([-np.inf], 0.5 * (x[:-1] + x[1:]), [np.inf]))


def _region_moments(x, dist):
    """Probability and first moment of every region"""
    e = outer_edges(x)
    dF = np.diff(dist.cdf(e))
    dM1 = np.diff(dist.lpe1(e))
    return dF, dM1


def _gradient(x, dF, dM1):
    return 2.0 * (x * dF - dM1)


def _tolerance(x, g0, grad_tol):
    floor = ROUNDOFF_FACTOR * np.finfo(float).eps * max(1.0, float(np.max(np.abs(x))))
    return max(grad_tol * g0, floor)


def _stationary(x, dF, grad, g0, grad_tol):
    """Gradient below tolerance with every region carrying mass"""
    return bool(np.max(np.abs(grad)) <= _tolerance(x, g0, grad_tol) and np.all(dF >= EMPTY_REGION_MASS))


def _hessian_bands(x, dist, dF):
    """Main diagonal and off-diagonal of the tridiagonal Hessian"""
    diag = 2.0 * dF.copy()
    if x.size == 1:
        return diag, np.zeros(0)
    mids = 0.5 * (x[:-1] + x[1:])
    off = 0.5 * dist.pdf(mids) * (x[:-1] - x[1:])
    diag[:-1] += off
    diag[1:] += off
    return diag, off


def _dense(diag, off):
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def _reciprocal_condition(diag, off):
    with np.errstate(all='ignore'):
        cond = np.linalg.cond(_dense(diag, off), 1)
    if not np.isfinite(cond) or cond <= 0.0:
        return 0.0
    return 1.0 / cond


def _inside(x, support):
    lo, hi = support
    return bool(
        np.all(np.isfinite(x))
        and np.all(np.diff(x) > 0.0)
        and x[0] >= lo
        and x[-1] <= hi
    )


def _as_codewords(obj):
    if isinstance(obj, Grid1D):
        return obj.codewords
    return np.asarray(obj, dtype=float).ravel()


def region_edges(grid):
    """
    Region boundaries of a grid, clipped to its support

    Parameters:
    -----------
    grid : Grid1D
        Quantizer with strictly increasing codewords

    Returns:
    --------
    np.ndarray
        Array of shape (N, 2) holding (x^{i-}, x^{i+}) per codeword
    """
    e = outer_edges(grid.codewords)
    lo, hi = grid.support
    return np.column_stack((np.maximum(e[:-1], lo), np.minimum(e[1:], hi)))


def distortion(grid, dist):
    """Mean squared quantization error, in closed form from F, M1 and M2"""
    x = grid.codewords
    e = outer_edges(x)
    dF = np.diff(dist.cdf(e))
    dM1 = np.diff(dist.lpe1(e))
    dM2 = np.diff(dist.lpe2(e))
    value = np.sum(dM2 - 2.0 * x * dM1 + x * x * dF)
    return max(float(value), 0.0)


def distortion_gradient(grid, dist):
    """dD/dx_i = 2 x_i (F(x^{i+}) - F(x^{i-})) - 2 (M1(x^{i+}) - M1(x^{i-}))"""
    dF, dM1 = _region_moments(grid.codewords, dist)
    return _gradient(grid.codewords, dF, dM1)


def distortion_hessian(grid, dist):
    """Symmetric tridiagonal Hessian of the distortion as a dense N x N array"""
    dF, _ = _region_moments(grid.codewords, dist)
    return _dense(*_hessian_bands(grid.codewords, dist, dF))


# ---------------------------------------------------------------------------
# Fixed-point and Newton steps
# ---------------------------------------------------------------------------

def _lloyd_map(x, dF, dM1):
    """
    Centroid map with empty-region repair.

    A region with mass below EMPTY_REGION_MASS has its codeword moved halfway
    toward the new centroid of the nearest non-empty region (ties go left).
    """
    e = outer_edges(x)
    empty = dF < EMPTY_REGION_MASS
    safe = np.where(empty, 1.0, dF)
    g = np.clip(dM1 / safe, e[:-1], e[1:])
    if not np.any(empty):
        return g, 0
    full = np.flatnonzero(~empty)
    if full.size == 0:
        return x.copy(), int(empty.sum())
    for i in np.flatnonzero(empty):
        pos = np.searchsorted(full, i)
        left = full[pos - 1] if pos > 0 else None
        right = full[pos] if pos < full.size else None
        if right is None or (left is not None and i - left <= right - i):
            target = g[left]
        else:
            target = g[right]
        g[i] = 0.5 * (x[i] + target)
    return g, int(empty.sum())


def lloyd_step(grid, dist):
    """
    One Lloyd iteration: every codeword becomes the centroid of its region

    Raises EmptyRegionError when a region has probability below 1e-300.
    """
    x = grid.codewords
    dF, dM1 = _region_moments(x, dist)
    empty = np.flatnonzero(dF < EMPTY_REGION_MASS)
    if empty.size:
        raise EmptyRegionError(empty)
    g, _ = _lloyd_map(x, dF, dM1)
    return Grid1D(g, support=grid.support)


def _newton_update(x, dist, support, cond_threshold, dF, grad):
    diag, off = _hessian_bands(x, dist, dF)
    rcond = _reciprocal_condition(diag, off)
    if rcond < cond_threshold:
        raise SingularHessianError(rcond)
    bands = np.zeros((3, x.size))
    bands[0, 1:] = off
    bands[1] = diag
    bands[2, :-1] = off
    delta = solve_banded((1, 1), bands, grad, check_finite=False)
    new = x - delta
    if not _inside(new, support):
        raise StepRejectedError("Newton step produced an unordered or out-of-support grid")
    return new


def newton_step(grid, dist, cond_threshold=COND_THRESHOLD):
    """
    One Newton-Raphson step on the distortion, solved as a tridiagonal system

    Raises SingularHessianError when the Hessian is ill-conditioned and
    StepRejectedError when the result is not an admissible grid.
    """
    x = grid.codewords
    dF, dM1 = _region_moments(x, dist)
    new = _newton_update(x, dist, grid.support, cond_threshold, dF, _gradient(x, dF, dM1))
    return Grid1D(new, support=grid.support)


def anderson_accelerate(history, depth=ANDERSON_DEPTH, ridge=ANDERSON_RIDGE):
    """
    Anderson mixing of a fixed-point iteration x -> g(x)

    Parameters:
    -----------
    history : sequence of (x, g(x)) pairs
        Most recent pair last; arrays or Grid1D objects
    depth : int
        Number of residual differences used in the least-squares problem
    ridge : float
        Ridge factor, relative to the mean squared residual difference

    Returns:
    --------
    np.ndarray or Grid1D
        Next iterate (Grid1D when the history holds grids)
    """
    if len(history) == 0 or depth < 1:
        raise ValueError("Anderson mixing needs at least one pair and depth >= 1")
    xs = [_as_codewords(x) for x, _ in history]
    gs = [_as_codewords(g) for _, g in history]
    m = min(depth, len(history) - 1)
    result = gs[-1]

    if m > 0:
        X = np.array(xs[-(m + 1):])
        G = np.array(gs[-(m + 1):])
        F = G - X
        dF = np.diff(F, axis=0).T
        dG = np.diff(G, axis=0).T
        A = dF.T @ dF
        scale = np.trace(A) / m
        if scale > 0.0 and np.linalg.matrix_rank(dF) == m:
            gamma = np.linalg.solve(A + ridge * scale * np.eye(m), dF.T @ F[-1])
            result = gs[-1] - dG @ gamma

    last = history[-1][1]
    if isinstance(last, Grid1D):
        return Grid1D(result, support=last.support)
    return result


# ---------------------------------------------------------------------------
# Initial grid and the hybrid optimizer
# ---------------------------------------------------------------------------

def _spread_increasing(q, support, step):
    lo, hi = support
    q = np.clip(np.asarray(q, dtype=float), lo, hi)
    for i in range(1, q.size):
        if q[i] <= q[i - 1]:
            q[i] = q[i - 1] + step
    if q[-1] > hi:
        q = q - (q[-1] - hi)
    return q


def quantile_grid(dist, n):
    """
    Codewords at the i/(n+1) quantiles of a distribution, by root finding on F

    Parameters:
    -----------
    dist : Distribution1D
        Target law
    n : int
        Number of codewords

    Returns:
    --------
    Grid1D
        Strictly increasing grid inside the support
    """
    lo, hi = dist.support
    mu = dist.mean
    sd = np.sqrt(dist.variance)
    scale = sd if sd > 0.0 else 1e-8 * max(1.0, abs(mu))
    probs = np.arange(1, n + 1) / (n + 1.0)

    a = max(lo, mu - 10.0 * scale)
    while a > lo and dist.cdf(a) > probs[0]:
        a = max(lo, mu - 2.0 * (mu - a) - scale)
    b = min(hi, mu + 10.0 * scale)
    while b < hi and dist.cdf(b) < probs[-1]:
        b = min(hi, mu + 2.0 * (b - mu) + scale)

    Fa, Fb = float(dist.cdf(a)), float(dist.cdf(b))
    q = np.empty(n)
    for i, p in enumerate(probs):
        if Fa >= p:
            q[i] = a
        elif Fb <= p:
            q[i] = b
        else:
            q[i] = brentq(lambda t: float(dist.cdf(t)) - p, a, b, xtol=1e-12 * max(1.0, abs(mu)))
    return Grid1D(_spread_increasing(q, (lo, hi), 1e-6 * scale), support=(lo, hi))


def optimize_grid(init, dist, cfg=None):
    """
    Optimal quantizer of a scalar law by the hybrid Newton-Raphson / Lloyd method

    Newton-Raphson runs while the Hessian stays well-conditioned and its steps
    remain admissible; if it does not converge, Anderson-accelerated Lloyd
    iterations complete the job.

    Parameters:
    -----------
    init : Grid1D
        Starting codewords, inside dist.support
    dist : Distribution1D
        Law to quantize
    cfg : OptimizerConfig, optional
        Solver settings; defaults from src.config

    Returns:
    --------
    Grid1D
        Optimized grid with weights; `info` holds QuantizerDiagnostics
    """
    cfg = cfg or OptimizerConfig()
    support = tuple(float(s) for s in dist.support)
    x = np.array(init.codewords, dtype=float)
    if x[0] < support[0] or x[-1] > support[1]:
        raise InvalidInitError(f"Initial codewords leave the support {support}")

    info = QuantizerDiagnostics()
    dF, dM1 = _region_moments(x, dist)
    grad = _gradient(x, dF, dM1)
    g0 = float(np.max(np.abs(grad)))
    converged = _stationary(x, dF, grad, g0, cfg.grad_tol)

    if not converged and cfg.strategy in ('hybrid', 'newton'):
        for _ in range(cfg.nr_max_iters):
            try:
                x = _newton_update(x, dist, support, cfg.cond_threshold, dF, grad)
            except SingularHessianError as exc:
                info.fallback_reason = 'singular-hessian'
                logger.debug("Newton stopped: %s", exc)
                break
            except StepRejectedError as exc:
                info.fallback_reason = 'step-rejected'
                logger.debug("Newton stopped: %s", exc)
                break
            info.newton_iterations += 1
            dF, dM1 = _region_moments(x, dist)
            grad = _gradient(x, dF, dM1)
            if _stationary(x, dF, grad, g0, cfg.grad_tol):
                converged = True
                break
        if not converged and info.fallback_reason is None:
            info.fallback_reason = 'newton-exhausted'

    if not converged and cfg.strategy in ('hybrid', 'lloyd'):
        if cfg.strategy == 'lloyd':
            info.fallback_reason = None
        else:
            logger.debug("Falling back to Lloyd iterations (%s)", info.fallback_reason)
        budget, depth = cfg.lloyd_max_iters, cfg.anderson_depth
        if dist.has_atoms:
            budget, depth = budget * ATOM_LLOYD_FACTOR, max(depth, ATOM_ANDERSON_DEPTH)
        history = deque(maxlen=depth + 1)
        step = 1e-9 * max(1.0, float(np.max(np.abs(x))))
        for _ in range(budget):
            g, merged = _lloyd_map(x, dF, dM1)
            if not _inside(g, support):
                g = _spread_increasing(g, support, step)
            info.empty_region_merges += merged
            if cfg.accelerate and merged == 0:
                history.append((x, g))
                x_new = anderson_accelerate(list(history), depth, cfg.anderson_ridge)
                if not _inside(x_new, support):
                    x_new = g
                    history.clear()
            else:
                history.clear()
                x_new = g
            x = x_new
            info.lloyd_iterations += 1
            dF, dM1 = _region_moments(x, dist)
            grad = _gradient(x, dF, dM1)
            if _stationary(x, dF, grad, g0, cfg.grad_tol):
                converged = True
                break

    if info.empty_region_merges:
        logger.info("Merged %d empty regions while quantizing", info.empty_region_merges)
    if not converged:
        logger.warning(
            "Quantizer hit its iteration limit (N=%d, |grad|=%.3e)", x.size, np.max(np.abs(grad))
        )

    info.converged = bool(converged)
    info.gradient_norm = float(np.max(np.abs(grad)))
    weights = np.clip(dF, 0.0, None)
    weights = weights / weights.sum()
    return Grid1D(x, weights, support, info=info)


if __name__ == "__main__":
    from src.quantization.mixture_dists import GaussianMixture

    normal = GaussianMixture([0.0], [1.0], [1.0])
    grid = optimize_grid(Grid1D([-0.5, 0.5]), normal)
    print("Two-point quantizer of N(0,1):")
    print(f"  codewords: {grid.codewords}")
    print(f"  weights:   {grid.weights}")
    print(f"  expected:  +/- {np.sqrt(2.0 / np.pi):.10f}")
    print(f"  diagnostics: {grid.info}")
