"""
Reference pricers

Fully truncated Euler Monte Carlo for the built-in models, the Heston
semi-analytic price and distribution function from the characteristic
function, and Black-76 prices with implied-volatility inversion.
"""

import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import ndtr

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.config import (
    CF_ABS_TOL,
    CF_SUBDIVISIONS,
    CF_TARGET_ACCURACY,
    CF_UPPER_LIMIT,
    IV_LOWER,
    IV_UPPER,
    IV_XTOL,
    MC_BLOCK_PATHS,
    MC_PATHS,
    MC_SEED,
    MC_STEPS_PER_YEAR,
)
from src.errors import NoSolutionError, ParameterDomainError, QuadratureAccuracyError
from src.pricing.pricing import spot_equivalent

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McConfig:
    """
    Monte Carlo settings

    Paths are simulated in blocks of `block_paths`; block b draws from the
    b-th child of np.random.SeedSequence(seed).
    """
    paths: int = MC_PATHS
    steps_per_year: int = MC_STEPS_PER_YEAR
    seed: int = MC_SEED
    antithetic: bool = False
    block_paths: int = MC_BLOCK_PATHS

    def __post_init__(self):
        if self.paths < 1 or self.steps_per_year < 1 or self.block_paths < 1:
            raise ValueError("Path count, steps per year and block size must be positive")
        if self.antithetic and (self.paths % 2 or self.block_paths % 2):
            raise ValueError("Antithetic sampling needs even path and block counts")


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    paths: int

    def z_score(self, value):
        """(value - mean) / stderr; 0 when the estimate is deterministic"""
        if self.stderr == 0.0:
            return 0.0
        return (value - self.mean) / self.stderr


def _simulate_block(model, functional, times, n_paths, seed_seq, antithetic):
    rng = np.random.default_rng(seed_seq)
    chol = np.linalg.cholesky(model.correlation)
    d = model.dim
    draws = n_paths // 2 if antithetic else n_paths
    x = np.repeat(model.x0[:, None], n_paths, axis=1)
    path = [x]
    for dt in np.diff(times):
        z = rng.standard_normal((d, draws))
        if antithetic:
            z = np.concatenate([z, -z], axis=1)
        dw = (chol @ z) * np.sqrt(dt)
        x = model.mc_step(x, dw, dt)
        path.append(x)
    values = np.asarray(functional(times, np.array(path)), dtype=float)
    if antithetic:
        values = 0.5 * (values[:draws] + values[draws:])
    return values


def mc_price(model, functional, horizon, cfg=None, threads=1):
    """
    Monte Carlo estimate of a discounted path functional

    Parameters:
    -----------
    model : SdeModel
        Simulated with its fully truncated `mc_step`
    functional : callable
        functional(times, paths) with paths of shape (steps + 1, d, n), returning
        n discounted payoffs
    horizon : float
        Simulation horizon in years
    cfg : McConfig, optional
    threads : int
        Worker threads over path blocks; results do not depend on it

    Returns:
    --------
    McEstimate
    """
    cfg = cfg or McConfig()
    n_steps = max(1, int(round(cfg.steps_per_year * horizon)))
    times = np.linspace(0.0, horizon, n_steps + 1)
    sizes = [cfg.block_paths] * (cfg.paths // cfg.block_paths)
    if cfg.paths % cfg.block_paths:
        sizes.append(cfg.paths % cfg.block_paths)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    jobs = [(model, functional, times, n, s, cfg.antithetic) for n, s in zip(sizes, seeds)]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda job: _simulate_block(*job), jobs))
    else:
        blocks = [_simulate_block(*job) for job in jobs]

    values = np.concatenate(blocks)
    stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return McEstimate(float(values.mean()), stderr, cfg.paths)


def option_functional(spec, grid_dt, horizon):
    """
    Path functional of an OptionSpec whose step indices refer to a grid with step grid_dt

    Bermudan/American specs are accepted only with a single exercise date at maturity.
    """
    k_mat = spec.maturity_step if spec.maturity_step is not None else int(round(horizon / grid_dt))
    t_mat = k_mat * grid_dt
    if spec.kind.startswith(('bermudan', 'american')):
        if spec.kind.startswith('american') or spec.steps != (k_mat,):
            raise ValueError("Monte Carlo prices early exercise only in the European limit")
    monitored = spec.steps if spec.steps is not None else tuple(range(1, k_mat + 1))
    monitored = [k for k in monitored if k <= k_mat]
    df = np.exp(-spec.rate * t_mat) if spec.discount else 1.0

    def functional(times, paths):
        def spot_at(t):
            idx = int(np.argmin(np.abs(times - t)))
            return spot_equivalent(paths[idx, 0], times[idx], horizon, spec.rate, spec.numeraire)

        payoff = spec.payoff(spot_at(t_mat))
        if spec.kind.startswith('up-and-out'):
            alive = np.ones(payoff.shape, dtype=bool)
            for k in monitored:
                alive &= spot_at(k * grid_dt) < spec.barrier
            payoff = np.where(alive, payoff, 0.0)
        return df * payoff

    return functional


# ---------------------------------------------------------------------------
# Heston characteristic function
# ---------------------------------------------------------------------------

def _heston_params(params):
    p = dict(getattr(params, 'params', params))
    for key in ('s0', 'v0', 'kappa', 'theta', 'sigma', 'r', 'rho'):
        if key not in p:
            raise ParameterDomainError(f"Missing Heston parameter: {key}")
    if min(p['s0'], p['v0'], p['kappa'], p['theta'], p['sigma']) <= 0.0 or abs(p['rho']) >= 1.0:
        raise ParameterDomainError(f"Heston parameters outside their domain: {p}")
    return p


def _log1p(z):
    """Complex log(1 + z), by its Taylor series for small |z|"""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-4
    series = z * (1.0 - z * (0.5 - z * (1.0 / 3.0 - 0.25 * z)))
    with np.errstate(all='ignore'):
        direct = np.log(1.0 + z)
    return np.where(small, series, direct)


def heston_cf(u, p, T):
    """
    E[exp(i u log S_T)] in the little-trap form

    b - d is evaluated as -sigma^2 (iu + u^2) / (b + d) so the small
    vol-of-vol limit stays finite.
    """
    u = np.asarray(u, dtype=complex)
    kappa, theta, sigma, rho = p['kappa'], p['theta'], p['sigma'], p['rho']
    iu = 1j * u
    b = kappa - rho * sigma * iu
    d = np.sqrt(b * b + sigma ** 2 * (iu + u * u))
    h = -(iu + u * u) / (b + d)          # (b - d) / sigma^2
    g = sigma ** 2 * h / (b + d)          # (b - d) / (b + d)
    e = np.exp(-d * T)
    log_ratio = (_log1p(-g * e) - _log1p(-g)) / sigma ** 2
    C = kappa * theta * (h * T - 2.0 * log_ratio)
    D = h * (1.0 - e) / (1.0 - g * e)
    return np.exp(iu * (np.log(p['s0']) + p['r'] * T) + C + D * p['v0'])


def _gil_pelaez(p, strike, T, shifted):
    """Tail probability P(S_T > K) under the spot (shifted) or risk-neutral measure"""
    log_k = np.log(strike)
    norm = heston_cf(-1j, p, T) if shifted else 1.0

    def integrand(u):
        phi = heston_cf(u - 1j, p, T) / norm if shifted else heston_cf(u, p, T)
        return float(np.real(np.exp(-1j * u * log_k) * phi / (1j * u)))

    value, err = quad(integrand, 0.0, CF_UPPER_LIMIT, epsabs=CF_ABS_TOL, epsrel=0.0, limit=CF_SUBDIVISIONS)
    return 0.5 + value / np.pi, err / np.pi


def heston_cf_price(params, strike, T, kind='put', target=CF_TARGET_ACCURACY):
    """
    European option price under Heston by Gil-Pelaez inversion

    Parameters:
    -----------
    params : dict or HestonModel
        s0, v0, kappa, theta, sigma, r, rho
    strike : float
    T : float
        Maturity in years
    kind : str
        'call' or 'put' (put by parity)
    target : float
        Accepted quadrature error on the price, per unit of max(s0, strike)

    Returns:
    --------
    float
    """
    p = _heston_params(params)
    df = np.exp(-p['r'] * T)
    P1, e1 = _gil_pelaez(p, strike, T, shifted=True)
    P2, e2 = _gil_pelaez(p, strike, T, shifted=False)
    achieved = p['s0'] * e1 + strike * df * e2
    limit = target * max(p['s0'], strike)
    if achieved > limit:
        raise QuadratureAccuracyError(achieved, limit)
    call = p['s0'] * P1 - strike * df * P2
    if kind.endswith('call'):
        return max(call, 0.0)
    return max(call - p['s0'] + strike * df, 0.0)


def heston_cdf(params, x, T):
    """P(S_T <= x) from the characteristic function, for scalar or array x"""
    p = _heston_params(params)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.array([1.0 - _gil_pelaez(p, xi, T, shifted=False)[0] if xi > 0.0 else 0.0 for xi in x])
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Black-76
# ---------------------------------------------------------------------------

def black_price(F, K, T, vol, df=1.0, kind='call'):
    """Black-76 price of a call or put on a forward F"""
    intrinsic = max(F - K, 0.0) if kind.endswith('call') else max(K - F, 0.0)
    if vol <= 0.0 or T <= 0.0:
        return df * intrinsic
    sd = vol * np.sqrt(T)
    d1 = (np.log(F / K) + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    if kind.endswith('call'):
        return df * (F * ndtr(d1) - K * ndtr(d2))
    return df * (K * ndtr(-d2) - F * ndtr(-d1))


def implied_vol(price, F, K, T, df=1.0, kind='call'):
    """
    Black-76 implied volatility by Brent's method on [IV_LOWER, IV_UPPER]

    A price at the intrinsic value returns IV_LOWER; prices outside
    [intrinsic, df F] for calls or [intrinsic, df K] for puts raise NoSolutionError.
    """
    is_call = kind.endswith('call')
    lower = df * (max(F - K, 0.0) if is_call else max(K - F, 0.0))
    upper = df * (F if is_call else K)
    slack = 1e-14 * max(F, K)
    if not np.isfinite(price) or price < lower - slack or price >= upper:
        raise NoSolutionError(f"Price {price!r} outside no-arbitrage bounds [{lower}, {upper})")
    if price <= lower + slack:
        return IV_LOWER

    def objective(vol):
        return black_price(F, K, T, vol, df, kind) - price

    if objective(IV_LOWER) >= 0.0:
        return IV_LOWER
    if objective(IV_UPPER) < 0.0:
        raise NoSolutionError(f"Price {price!r} needs a volatility above {IV_UPPER}")
    return brentq(objective, IV_LOWER, IV_UPPER, xtol=IV_XTOL, rtol=4 * np.finfo(float).eps, maxiter=200)


if __name__ == "__main__":
    from src.config import HESTON_PARAMS

    print("Black-76 ATM call (F=K=100, T=1, vol=20%):", round(black_price(100, 100, 1, 0.2), 5))
    print("Implied vol round trip:", implied_vol(black_price(100, 100, 1, 0.2), 100, 100, 1))
    for strike in (80.0, 100.0, 120.0):
        put = heston_cf_price(HESTON_PARAMS, strike, 1.0, 'put')
        print(f"Heston CF put K={strike:.0f}: {put:.8f}")
