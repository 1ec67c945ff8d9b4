"""
Model calibration to implied-volatility quotes

The objective is the relative squared volatility error (RSVE) between
market implied volatilities and the Black-76 implied volatilities of prices
read off one product grid built to the longest quoted maturity.
Minimization is Nelder-Mead on box-transformed parameters.
"""

import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from scipy.optimize import minimize

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.config import (
    CALIB_FATOL,
    CALIB_MAX_EVALS,
    CALIB_STEPS_PER_YEAR,
    CALIB_STOP_OBJECTIVE,
    CALIB_XATOL,
    MIN_CALIB_STEPS,
    OBJECTIVE_SENTINEL,
    PENALTY_FACTOR,
    PENALTY_FLOOR,
)
from src.data.load_quotes import QUOTE_COLUMNS
from src.data.preprocess import maturity_steps
from src.errors import NoSolutionError, PMQError
from src.models.oracles import implied_vol
from src.models.sde_models import Schedule, build_model
from src.pricing.pricing import OptionSpec, price_option
from src.quantization.grid_builder import build_grids
from src.quantization.quantize_core import OptimizerConfig

logger = logging.getLogger(__name__)

# Calibrated parameters per model and their admissible boxes
CALIBRATION_PARAMS = {
    'sabr': ('y0', 'beta', 'nu', 'rho'),
    'heston': ('v0', 'kappa', 'theta', 'sigma', 'rho'),
    'gbm': ('sigma',),
}
DEFAULT_BOUNDS = {
    'y0': (0.0, np.inf),
    'v0': (0.0, np.inf),
    'kappa': (0.0, np.inf),
    'theta': (0.0, np.inf),
    'sigma': (0.0, np.inf),
    'nu': (0.0, np.inf),
    'beta': (0.0, 1.0),
    'rho': (-1.0, 1.0),
}
BOUND_MARGIN = 1e-9


@dataclass
class QuoteSet:
    """
    Calibration instruments with a flat discount curve

    `table` holds the columns of QUOTE_COLUMNS; `kind` is 'call', 'put',
    'american-call' or 'american-put'.
    """
    table: pd.DataFrame
    spot: float
    rate: float = 0.0

    def __post_init__(self):
        missing = [c for c in QUOTE_COLUMNS if c not in self.table.columns]
        if missing:
            raise ValueError(f"Quote table is missing columns {missing}")
        if self.table.empty:
            raise ValueError("A quote set needs at least one quote")
        if (self.table['market_implied_vol'] <= 0).any() or (self.table['maturity_years'] <= 0).any():
            raise ValueError("Quoted volatilities and maturities must be positive")
        if not self.spot > 0.0:
            raise ValueError("Spot must be positive")
        self.table = self.table.reset_index(drop=True)

    def __len__(self):
        return len(self.table)

    @property
    def max_maturity(self):
        return float(self.table['maturity_years'].max())


@dataclass(frozen=True)
class GridSettings:
    """
    How candidate grids are built during calibration

    steps = max(min_steps, ceil(steps_per_year * longest maturity)); a quote
    of maturity T is priced at step round(T / dt), at least 1.
    """
    sizes: tuple = (20, 10)
    schemes: Optional[tuple] = ('euler', 'wo2')
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    steps_per_year: int = CALIB_STEPS_PER_YEAR
    min_steps: int = MIN_CALIB_STEPS
    threads: int = 1

    def schedule(self, horizon):
        steps = max(self.min_steps, int(math.ceil(self.steps_per_year * horizon - 1e-12)))
        return Schedule(horizon, steps, self.sizes)


@dataclass
class CalibResult:
    params: dict
    objective: float
    trace: pd.DataFrame
    residuals: pd.DataFrame
    evaluations: int
    converged: bool
    budget_exhausted: bool
    fallback_count: int = 0


def model_params(model_name, theta, quotes, horizon, base=None):
    """
    Full parameter dict of a candidate: calibrated values plus what the quotes fix

    SABR gets its forward to the grid horizon from the spot and rate.
    """
    params = dict(base or {})
    params.update(theta)
    if model_name == 'sabr':
        params.setdefault('f0', quotes.spot * math.exp(quotes.rate * horizon))
        params['r'] = quotes.rate
    elif model_name == 'heston':
        params.setdefault('s0', quotes.spot)
        params['r'] = quotes.rate
    elif model_name == 'gbm':
        params.setdefault('x0', quotes.spot)
        params['r'] = quotes.rate
    return params


def _numeraire(model_name):
    return 'forward' if model_name == 'sabr' else 'spot'


def _quote_spec(row, k, quotes, model_name):
    kind = str(row['kind']).lower()
    option_kind = kind if kind.startswith('american') else f"european-{kind}"
    return OptionSpec(
        option_kind, float(row['strike']), maturity_step=k,
        rate=quotes.rate, numeraire=_numeraire(model_name),
    )


def model_prices(grids, quotes, model_name):
    """Grid prices of every quote, read off a single grid sequence"""
    steps = maturity_steps(quotes.table['maturity_years'], grids.dt, len(grids) - 1)
    prices = []
    for k, (_, row) in zip(steps, quotes.table.iterrows()):
        prices.append(price_option(grids, _quote_spec(row, int(k), quotes, model_name)))
    return np.array(prices)


def rsve_from_prices(prices, quotes):
    """
    Relative squared volatility error of a price vector

    Quotes whose price cannot be inverted contribute
    PENALTY_FACTOR * max(largest squared residual, PENALTY_FLOOR) each.

    Returns:
    --------
    tuple
        (objective, per-quote DataFrame)
    """
    table = quotes.table
    model_vols = np.full(len(table), np.nan)
    for i, (price, (_, row)) in enumerate(zip(prices, table.iterrows())):
        T = float(row['maturity_years'])
        forward = quotes.spot * math.exp(quotes.rate * T)
        df = math.exp(-quotes.rate * T)
        kind = 'call' if str(row['kind']).endswith('call') else 'put'
        try:
            model_vols[i] = implied_vol(price, forward, float(row['strike']), T, df, kind)
        except NoSolutionError as exc:
            logger.debug("Quote %d not invertible: %s", i, exc)

    market = table['market_implied_vol'].to_numpy(dtype=float)
    residual = (model_vols - market) / market
    squared = residual ** 2
    failed = np.isnan(squared)
    penalty = 0.0
    if failed.any():
        worst = float(np.nanmax(squared)) if (~failed).any() else 0.0
        penalty = PENALTY_FACTOR * max(worst, PENALTY_FLOOR)
        logger.info("%d quotes penalized in the RSVE", int(failed.sum()))
    contribution = np.where(failed, penalty, squared)

    report = pd.DataFrame({
        'maturity_years': table['maturity_years'],
        'strike': table['strike'],
        'kind': table['kind'],
        'market_implied_vol': market,
        'model_price': prices,
        'model_implied_vol': model_vols,
        'relative_residual': residual,
        'contribution': contribution,
    })
    return float(contribution.sum()), report


def rsve(model_name, theta, quotes, settings=None, base=None, return_details=False):
    """
    RSVE of a parameter set against a quote set

    Parameters:
    -----------
    model_name : str
        Catalog model ('sabr', 'heston', 'gbm')
    theta : dict
        Calibrated parameter values
    quotes : QuoteSet
    settings : GridSettings, optional
    base : dict, optional
        Extra fixed model parameters
    return_details : bool
        Also return the per-quote DataFrame and the grid fallback count

    Returns:
    --------
    float, or (float, pd.DataFrame, int)
        OBJECTIVE_SENTINEL when the candidate grid cannot be built
    """
    settings = settings or GridSettings()
    horizon = quotes.max_maturity
    try:
        model = build_model(model_name, model_params(model_name, theta, quotes, horizon, base))
        grids = build_grids(
            model, settings.schedule(horizon), settings.schemes, settings.optimizer, settings.threads
        )
        prices = model_prices(grids, quotes, model_name)
    except (PMQError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.warning("Grid build failed for %s: %s", theta, exc)
        if return_details:
            return OBJECTIVE_SENTINEL, pd.DataFrame(), 0
        return OBJECTIVE_SENTINEL

    value, report = rsve_from_prices(prices, quotes)
    if return_details:
        return value, report, grids.fallback_count
    return value


class ParameterTransform:
    """Map a box (lo, hi) to the real line: logit, log or identity"""

    def __init__(self, lo, hi):
        self.lo, self.hi = float(lo), float(hi)

    def to_internal(self, x):
        lo, hi = self.lo, self.hi
        if np.isfinite(lo) and np.isfinite(hi):
            u = (x - lo) / (hi - lo)
            u = min(max(u, BOUND_MARGIN), 1.0 - BOUND_MARGIN)
            return math.log(u / (1.0 - u))
        if np.isfinite(lo):
            return math.log(max(x - lo, BOUND_MARGIN))
        if np.isfinite(hi):
            return -math.log(max(hi - x, BOUND_MARGIN))
        return float(x)

    def to_external(self, z):
        lo, hi = self.lo, self.hi
        if np.isfinite(lo) and np.isfinite(hi):
            u = 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0
            u = min(max(u, BOUND_MARGIN), 1.0 - BOUND_MARGIN)
            return lo + (hi - lo) * u
        if np.isfinite(lo):
            return lo + max(math.exp(min(z, 700.0)), BOUND_MARGIN)
        if np.isfinite(hi):
            return hi - max(math.exp(min(-z, 700.0)), BOUND_MARGIN)
        return float(z)


class _StopSearch(Exception):
    pass


def calibrate(model_name, quotes, init, settings=None, bounds=None, budget=CALIB_MAX_EVALS,
              fixed=None, base=None):
    """
    Minimize the RSVE over the model's calibration parameters

    Parameters:
    -----------
    model_name : str
        'sabr', 'heston' or 'gbm'
    quotes : QuoteSet
    init : dict
        Starting values of the calibrated parameters
    settings : GridSettings, optional
    bounds : dict, optional
        Per-parameter (lo, hi) overriding DEFAULT_BOUNDS
    budget : int
        Maximum number of objective evaluations, the initial one included
    fixed : dict, optional
        Parameters held at the given values
    base : dict, optional
        Further fixed model parameters passed to the model constructor

    Returns:
    --------
    CalibResult
        Best parameters found; `budget_exhausted` flags an interrupted search
    """
    settings = settings or GridSettings()
    fixed = dict(fixed or {})
    if model_name not in CALIBRATION_PARAMS:
        raise ValueError(f"Unknown model_type: {model_name}")
    names = [n for n in CALIBRATION_PARAMS[model_name] if n not in fixed]
    box = dict(DEFAULT_BOUNDS)
    box.update(bounds or {})
    for name in names:
        if name not in init:
            raise ValueError(f"Missing initial value for {name}")
        lo, hi = box[name]
        if not lo <= init[name] <= hi:
            raise ValueError(f"Initial {name}={init[name]} outside bounds ({lo}, {hi})")
    transforms = [ParameterTransform(*box[n]) for n in names]

    trace = []
    best = {'objective': np.inf, 'theta': None, 'report': None}

    def theta_of(z):
        theta = {n: t.to_external(float(zi)) for n, t, zi in zip(names, transforms, z)}
        theta.update(fixed)
        return theta

    def evaluate(theta):
        value, report, fallbacks = rsve(model_name, theta, quotes, settings, base, return_details=True)
        penalized = int(report['model_implied_vol'].isna().sum()) if len(report) else len(quotes)
        trace.append({'evaluation': len(trace) + 1, **theta, 'objective': value,
                      'fallbacks': fallbacks, 'penalized_quotes': penalized})
        if value < best['objective']:
            best.update(objective=value, theta=dict(theta), report=report)
        return value

    def objective(z):
        if len(trace) >= budget:
            raise _StopSearch('budget')
        value = evaluate(theta_of(z))
        if value < CALIB_STOP_OBJECTIVE:
            raise _StopSearch('target')
        return value

    start = {n: float(init[n]) for n in names}
    start.update(fixed)
    z0 = np.array([t.to_internal(start[n]) for n, t in zip(names, transforms)])

    converged, exhausted = False, False
    f0 = evaluate(theta_of(z0))
    if f0 < CALIB_STOP_OBJECTIVE:
        converged = True
    elif len(trace) >= budget:
        exhausted = True
    elif names:
        try:
            res = minimize(
                objective, z0, method='Nelder-Mead',
                options={'maxfev': budget, 'xatol': CALIB_XATOL, 'fatol': CALIB_FATOL},
            )
            converged = bool(res.success)
        except _StopSearch as stop:
            converged = str(stop) == 'target'
            exhausted = str(stop) == 'budget'
    else:
        converged = True

    trace_df = pd.DataFrame(trace)
    if exhausted:
        logger.warning("Calibration budget of %d evaluations exhausted", budget)
    return CalibResult(
        params=best['theta'],
        objective=best['objective'],
        trace=trace_df,
        residuals=best['report'],
        evaluations=len(trace),
        converged=converged,
        budget_exhausted=exhausted,
        fallback_count=int(trace_df['fallbacks'].sum()) if len(trace_df) else 0,
    )


def synthetic_quotes(model_name, theta, strikes, maturities, spot, rate=0.0, kind='put',
                     settings=None, base=None):
    """
    Quote set priced by the grid pipeline itself, for recovery tests

    Returns:
    --------
    QuoteSet
        One quote per (maturity, strike) with the grid-implied volatility
    """
    settings = settings or GridSettings()
    rows = [
        {'maturity_years': float(T), 'strike': float(K), 'kind': kind,
         'market_implied_vol': 1.0, 'volume': 1}
        for T in maturities for K in strikes
    ]
    placeholder = QuoteSet(pd.DataFrame(rows, columns=QUOTE_COLUMNS), spot, rate)
    horizon = placeholder.max_maturity
    model = build_model(model_name, model_params(model_name, theta, placeholder, horizon, base))
    grids = build_grids(model, settings.schedule(horizon), settings.schemes, settings.optimizer, settings.threads)
    _, report = rsve_from_prices(model_prices(grids, placeholder, model_name), placeholder)
    table = placeholder.table.copy()
    table['market_implied_vol'] = report['model_implied_vol'].to_numpy()
    table = table[table['market_implied_vol'].notna() & (table['market_implied_vol'] > 1e-6)]
    return QuoteSet(table, spot, rate)


if __name__ == "__main__":
    from src.config import SABR_PARAMS, SABR_RATE, SABR_SPOT

    truth = {k: SABR_PARAMS[k] for k in ('y0', 'beta', 'nu', 'rho')}
    quotes = synthetic_quotes('sabr', truth, [90.0, 100.0, 110.0], [0.5, 1.0], SABR_SPOT, SABR_RATE)
    print("Synthetic SABR quotes:")
    print(quotes.table.to_string(index=False))
    print(f"\nRSVE at the generating parameters: {rsve('sabr', truth, quotes):.3e}")
