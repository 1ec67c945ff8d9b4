"""
Option pricing on product quantization grids

European options from the terminal joint weights, discretely monitored
up-and-out options by forward propagation of surviving mass, and Bermudan
options by backward induction over the transition matrices.
"""

import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

logger = logging.getLogger(__name__)

OPTION_KINDS = (
    'european-put', 'european-call',
    'up-and-out-put', 'up-and-out-call',
    'bermudan-put', 'bermudan-call',
    'american-put', 'american-call',
)
NUMERAIRES = ('spot', 'forward')


@dataclass(frozen=True)
class OptionSpec:
    """
    Option written on the first coordinate of a grid

    Parameters:
    -----------
    kind : str
        One of OPTION_KINDS; American options are exercised on the grid steps
    strike : float
        Strike level
    maturity_step : int, optional
        Grid step of the maturity; the last step when None
    barrier : float, optional
        Knockout level of up-and-out options (knocked out when x >= barrier)
    steps : tuple of int, optional
        Monitoring or exercise steps; every step 1..maturity when None
    rate : float
        Flat interest rate used for discounting
    discount : bool
        Discount payoffs at the flat rate
    numeraire : str
        'spot' when dimension 1 is the asset price, 'forward' when it is the
        forward to the grid horizon
    name : str
        Instrument identifier used in price tables
    """
    kind: str
    strike: float
    maturity_step: Optional[int] = None
    barrier: Optional[float] = None
    steps: Optional[tuple] = None
    rate: float = 0.0
    discount: bool = True
    numeraire: str = 'spot'
    name: str = ''

    def __post_init__(self):
        if self.kind not in OPTION_KINDS:
            raise ValueError(f"Unknown option kind: {self.kind}")
        if not self.strike > 0.0:
            raise ValueError(f"Strike must be positive, got {self.strike}")
        if self.numeraire not in NUMERAIRES:
            raise ValueError(f"Unknown numeraire: {self.numeraire}")
        if self.kind.startswith('up-and-out') and (self.barrier is None or not self.barrier > 0.0):
            raise ValueError("Up-and-out options need a positive barrier")
        if self.steps is not None:
            object.__setattr__(self, 'steps', tuple(sorted(int(k) for k in self.steps)))

    @property
    def is_call(self):
        return self.kind.endswith('call')

    def payoff(self, spot):
        spot = np.asarray(spot, dtype=float)
        if self.is_call:
            return np.maximum(spot - self.strike, 0.0)
        return np.maximum(self.strike - spot, 0.0)


def _maturity(grids, spec):
    K = len(grids) - 1
    k = K if spec.maturity_step is None else int(spec.maturity_step)
    if not 0 <= k <= K:
        raise ValueError(f"Maturity step {k} outside the grid (0..{K})")
    return k


def _event_steps(grids, spec, maturity):
    if spec.steps is None:
        return tuple(range(1, maturity + 1))
    if any(k < 1 or k > len(grids) - 1 for k in spec.steps):
        raise ValueError(f"Monitoring/exercise steps {spec.steps} outside 1..{len(grids) - 1}")
    return tuple(k for k in spec.steps if k <= maturity)


def spot_equivalent(x1, t, horizon, rate, numeraire):
    """Asset value from the first grid coordinate; forwards are discounted to time t"""
    x1 = np.asarray(x1, dtype=float)
    if numeraire == 'forward':
        return x1 * np.exp(-rate * (horizon - t))
    return x1


def _spot(grids, k, spec):
    step = grids[k]
    x1 = step.codewords[0]
    return spot_equivalent(x1, k * grids.dt, grids.schedule.horizon, spec.rate, spec.numeraire)


def _discount(spec, t):
    return np.exp(-spec.rate * t) if spec.discount else 1.0


def expectation(step, payoff):
    """
    Sum of payoff(x_i) p_i over the joint codewords of a grid step

    Parameters:
    -----------
    step : ProductGridStep
    payoff : callable
        Maps the (d, N) codeword array to N payoff values
    """
    values = np.asarray(payoff(step.codewords), dtype=float)
    return float(step.flat_weights @ values)


def price_european(grids, spec):
    """Discounted expectation of the payoff at the maturity step"""
    k = _maturity(grids, spec)
    spot = _spot(grids, k, spec)
    value = float(grids[k].flat_weights @ spec.payoff(spot))
    return _discount(spec, k * grids.dt) * value


def price_barrier_up_out(grids, spec):
    """
    Discretely monitored up-and-out option

    Surviving mass is carried forward with the transition matrices and set to
    zero on codewords at or above the barrier at every monitoring step.
    """
    k_mat = _maturity(grids, spec)
    monitored = set(_event_steps(grids, spec, k_mat))
    mass = grids[0].flat_weights.copy()
    for k in range(1, k_mat + 1):
        mass = mass @ grids[k].transition
        if k in monitored:
            mass[_spot(grids, k, spec) >= spec.barrier] = 0.0
    value = float(mass @ spec.payoff(_spot(grids, k_mat, spec)))
    return _discount(spec, k_mat * grids.dt) * value


def price_bermudan(grids, spec):
    """
    Bermudan option by backward induction

    V_K = payoff; V_k = max(exercise value on exercise steps, e^{-r dt} T_{k+1} V_{k+1}).
    The maturity step is always an exercise date.
    """
    k_mat = _maturity(grids, spec)
    exercise = set(_event_steps(grids, spec, k_mat)) | {k_mat}
    step_df = _discount(spec, grids.dt)
    value = spec.payoff(_spot(grids, k_mat, spec))
    for k in range(k_mat - 1, -1, -1):
        value = step_df * (grids[k + 1].transition @ value)
        if k in exercise and k >= 1:
            value = np.maximum(value, spec.payoff(_spot(grids, k, spec)))
    return float(grids[0].flat_weights @ value)


def price_bermudan_put(grids, spec):
    if spec.is_call:
        raise ValueError("price_bermudan_put expects a put")
    return price_bermudan(grids, spec)


def price_option(grids, spec):
    """Dispatch on the option kind"""
    if spec.kind.startswith('european'):
        return price_european(grids, spec)
    if spec.kind.startswith('up-and-out'):
        return price_barrier_up_out(grids, spec)
    return price_bermudan(grids, spec)


def price_book(grids, specs):
    """
    Price a list of options on one grid sequence

    Returns:
    --------
    pd.DataFrame
        Columns id, kind, strike, barrier, maturity, price (one row per option)
    """
    rows = []
    for i, spec in enumerate(specs):
        k = _maturity(grids, spec)
        rows.append({
            'id': spec.name or f"opt{i + 1}",
            'kind': spec.kind,
            'strike': spec.strike,
            'barrier': spec.barrier if spec.barrier is not None else np.nan,
            'maturity': k * grids.dt,
            'price': price_option(grids, spec),
        })
    columns = ['id', 'kind', 'strike', 'barrier', 'maturity', 'price']
    return pd.DataFrame(rows, columns=columns)


if __name__ == "__main__":
    from src.config import HESTON_PARAMS
    from src.models.sde_models import Schedule, build_model
    from src.quantization.grid_builder import pmq

    model = build_model('heston', HESTON_PARAMS)
    grids = pmq(model, Schedule(1.0, 12, (30, 15)), ('euler', 'wo2'))
    print("Heston European puts (Euler-WO2 grid):")
    for strike in (80.0, 100.0, 120.0):
        spec = OptionSpec('european-put', strike, rate=model.rate)
        print(f"  K={strike:6.1f}: {price_european(grids, spec):.6f}")
