"""
SDE models: coefficient providers and one-step update coefficients

Every model exposes its drift a(x) and diagonal diffusion b(x) on a state
array of shape (d, M), the correlation of its Brownian drivers, per-dimension
lower bounds of the state space, and the scalar coefficients (a, a', a'', b,
b', b'') of each dimension that depends on its own coordinate only.
"""

import logging
import sys
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.config import (
    GBM_PARAMS,
    GBM2D_PARAMS,
    HESTON_PARAMS,
    SABR_PARAMS,
    STATE_FLOOR,
)
from src.errors import (
    ConfigurationError,
    DegenerateDiffusionError,
    ParameterDomainError,
    Wo2UnsupportedError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    """
    Time grid of a quantization run

    Parameters:
    -----------
    horizon : float
        Final time T in years
    steps : int
        Number of time steps K
    sizes : tuple of int
        Codewords per dimension, held constant over the steps
    """
    horizon: float
    steps: int
    sizes: tuple

    def __post_init__(self):
        object.__setattr__(self, 'sizes', tuple(int(n) for n in np.atleast_1d(self.sizes)))
        if not (np.isfinite(self.horizon) and self.horizon > 0.0):
            raise ConfigurationError(f"Horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError(f"Step count must be a positive integer, got {self.steps}")
        if any(n < 1 for n in self.sizes):
            raise ConfigurationError(f"Codeword counts must be positive, got {self.sizes}")
        object.__setattr__(self, 'steps', int(self.steps))

    @property
    def dt(self):
        return self.horizon / self.steps

    def times(self):
        return np.arange(self.steps + 1) * self.dt


def _positive(params, *names):
    for name in names:
        value = np.asarray(params[name], dtype=float)
        if not np.all(np.isfinite(value)) or np.any(value <= 0.0):
            raise ParameterDomainError(f"{name} must be positive, got {params[name]}")


def _check_correlation(corr):
    corr = np.asarray(corr, dtype=float)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ParameterDomainError("Correlation matrix must be square")
    if not np.allclose(corr, corr.T) or not np.allclose(np.diag(corr), 1.0):
        raise ParameterDomainError("Correlation matrix must be symmetric with unit diagonal")
    off = corr[~np.eye(corr.shape[0], dtype=bool)]
    if np.any(np.abs(off) >= 1.0):
        raise ParameterDomainError("Off-diagonal correlations must lie in (-1, 1)")
    if np.linalg.eigvalsh(corr).min() < -1e-12:
        raise ParameterDomainError("Correlation matrix is not positive semi-definite")
    return corr


class SdeModel(ABC):
    """
    Diffusion dX = a(X) dt + diag(b(X)) dW with d<W^i, W^j> = C_ij dt
    """

    name = ''
    param_names = ()
    optional_params = {}

    def __init__(self, params):
        unknown = set(params) - set(self.param_names) - set(self.optional_params)
        if unknown:
            raise ParameterDomainError(f"Unknown parameters for {self.name}: {sorted(unknown)}")
        missing = [k for k in self.param_names if k not in params]
        if missing:
            raise ParameterDomainError(f"Missing parameters for {self.name}: {missing}")
        merged = dict(self.optional_params)
        merged.update(params)
        self.params = merged
        self._validate()

    def __repr__(self):
        return f"{type(self).__name__}({self.params})"

    @abstractmethod
    def _validate(self):
        ...

    @property
    @abstractmethod
    def x0(self):
        ...

    @property
    def dim(self):
        return self.x0.size

    @property
    def correlation(self):
        return np.eye(self.dim)

    @property
    def lower_bounds(self):
        return (0.0,) * self.dim

    @property
    def autonomous(self):
        """Dimensions whose coefficients depend on their own coordinate only"""
        return (False,) * self.dim

    @property
    def rate(self):
        return float(self.params.get('r', 0.0))

    def truncate(self, x):
        """Clamp each row at its lower bound before evaluating coefficients"""
        x = np.array(x, dtype=float)
        for n, lo in enumerate(self.lower_bounds):
            if np.isfinite(lo):
                x[n] = np.maximum(x[n], lo)
        return x

    @abstractmethod
    def drift(self, x):
        ...

    @abstractmethod
    def diffusion(self, x):
        ...

    def scalar_coefficients(self, n, xn):
        """(a, a', a'', b, b', b'') of an autonomous dimension at xn"""
        raise ConfigurationError(f"Dimension {n} of {self.name} depends on other coordinates")

    def mc_step(self, x, dw, dt):
        """Fully truncated Euler step; x and dw have shape (d, paths)"""
        xt = self.truncate(x)
        return x + self.drift(xt) * dt + self.diffusion(xt) * dw


class GbmModel(SdeModel):
    """Correlated geometric Brownian motions dX^n = r X^n dt + sigma_n X^n dW^n"""

    name = 'gbm'
    param_names = ('x0', 'r', 'sigma')
    optional_params = {'rho': 0.0}

    def _validate(self):
        x0 = np.atleast_1d(np.asarray(self.params['x0'], dtype=float))
        sigma = np.broadcast_to(np.asarray(self.params['sigma'], dtype=float), x0.shape).copy()
        _positive(self.params, 'x0')
        if np.any(sigma < 0.0) or not np.all(np.isfinite(sigma)):
            raise ParameterDomainError(f"sigma must be non-negative, got {self.params['sigma']}")
        self._x0, self._sigma = x0, sigma
        rho = np.asarray(self.params['rho'], dtype=float)
        if rho.ndim == 2:
            self._corr = _check_correlation(rho)
        else:
            corr = np.full((x0.size, x0.size), float(rho))
            np.fill_diagonal(corr, 1.0)
            self._corr = _check_correlation(corr)
        if self._corr.shape[0] != x0.size:
            raise ParameterDomainError("Correlation size does not match the number of assets")
        if x0.size > 1:
            self.name = 'gbm2d' if x0.size == 2 else 'gbm'

    @property
    def x0(self):
        return self._x0.copy()

    @property
    def sigma(self):
        return self._sigma.copy()

    @property
    def correlation(self):
        return self._corr.copy()

    @property
    def autonomous(self):
        return (True,) * self.dim

    def drift(self, x):
        return self.rate * np.asarray(x, dtype=float)

    def diffusion(self, x):
        x = np.asarray(x, dtype=float)
        return self._sigma.reshape((-1,) + (1,) * (x.ndim - 1)) * x

    def scalar_coefficients(self, n, xn):
        xn = np.asarray(xn, dtype=float)
        r, s = self.rate, self._sigma[n]
        zero = np.zeros_like(xn)
        return r * xn, r + zero, zero, s * xn, s + zero, zero

    def mc_step(self, x, dw, dt):
        s = self._sigma[:, None]
        return x * np.exp((self.rate - 0.5 * s * s) * dt + s * dw)


class HestonModel(SdeModel):
    """
    dS = r S dt + sqrt(v) S dW1,  dv = kappa (theta - v) dt + sigma sqrt(v) dW2
    """

    name = 'heston'
    param_names = ('s0', 'v0', 'kappa', 'theta', 'sigma', 'r', 'rho')

    def _validate(self):
        _positive(self.params, 's0', 'v0', 'kappa', 'theta', 'sigma')
        if not -1.0 < float(self.params['rho']) < 1.0:
            raise ParameterDomainError(f"rho must lie in (-1, 1), got {self.params['rho']}")

    @property
    def x0(self):
        return np.array([self.params['s0'], self.params['v0']], dtype=float)

    @property
    def correlation(self):
        rho = float(self.params['rho'])
        return np.array([[1.0, rho], [rho, 1.0]])

    @property
    def autonomous(self):
        return (False, True)

    @property
    def feller_ratio(self):
        p = self.params
        return 2.0 * p['kappa'] * p['theta'] / p['sigma'] ** 2

    def drift(self, x):
        s, v = self.truncate(x)
        p = self.params
        return np.array([p['r'] * s, p['kappa'] * (p['theta'] - v)])

    def diffusion(self, x):
        s, v = self.truncate(x)
        vol = np.sqrt(v)
        return np.array([vol * s, self.params['sigma'] * vol])

    def scalar_coefficients(self, n, xn):
        if n != 1:
            return super().scalar_coefficients(n, xn)
        v = np.asarray(xn, dtype=float)
        k, th, sig = self.params['kappa'], self.params['theta'], self.params['sigma']
        root = np.sqrt(v)
        zero = np.zeros_like(v)
        return (
            k * (th - v), -k + zero, zero,
            sig * root, sig / (2.0 * root), -sig / (4.0 * v * root),
        )

    def mc_step(self, x, dw, dt):
        s, v = x
        vp = np.maximum(v, 0.0)
        p = self.params
        s_next = s * np.exp((p['r'] - 0.5 * vp) * dt + np.sqrt(vp) * dw[0])
        v_next = v + p['kappa'] * (p['theta'] - vp) * dt + p['sigma'] * np.sqrt(vp) * dw[1]
        return np.array([s_next, v_next])


class SabrModel(SdeModel):
    """
    dF = y F^beta dW1,  dy = nu y dW2 (forward and volatility, both driftless)
    """

    name = 'sabr'
    param_names = ('f0', 'y0', 'beta', 'nu', 'rho')
    optional_params = {'r': 0.0}

    def _validate(self):
        _positive(self.params, 'f0', 'y0', 'nu')
        if not 0.0 <= float(self.params['beta']) <= 1.0:
            raise ParameterDomainError(f"beta must lie in [0, 1], got {self.params['beta']}")
        if not -1.0 < float(self.params['rho']) < 1.0:
            raise ParameterDomainError(f"rho must lie in (-1, 1), got {self.params['rho']}")

    @property
    def x0(self):
        return np.array([self.params['f0'], self.params['y0']], dtype=float)

    @property
    def correlation(self):
        rho = float(self.params['rho'])
        return np.array([[1.0, rho], [rho, 1.0]])

    @property
    def autonomous(self):
        return (False, True)

    def drift(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def diffusion(self, x):
        f, y = self.truncate(x)
        return np.array([y * f ** self.params['beta'], self.params['nu'] * y])

    def scalar_coefficients(self, n, xn):
        if n != 1:
            return super().scalar_coefficients(n, xn)
        y = np.asarray(xn, dtype=float)
        nu = self.params['nu']
        zero = np.zeros_like(y)
        return zero, zero, zero, nu * y, nu + zero, zero

    def mc_step(self, x, dw, dt):
        f, y = x
        yp = np.maximum(y, 0.0)
        nu = self.params['nu']
        f_next = f + yp * np.maximum(f, 0.0) ** self.params['beta'] * dw[0]
        y_next = yp * np.exp(-0.5 * nu * nu * dt + nu * dw[1])
        return np.array([f_next, y_next])


MODEL_CATALOG = {
    'gbm': GbmModel,
    'gbm2d': GbmModel,
    'heston': HestonModel,
    'sabr': SabrModel,
}


def build_model(name, params):
    """
    Instantiate a catalog model from a parameter dict

    Parameters:
    -----------
    name : str
        One of 'gbm', 'gbm2d', 'heston', 'sabr'
    params : dict
        Model parameters; unknown keys are rejected

    Returns:
    --------
    SdeModel
    """
    if name not in MODEL_CATALOG:
        raise ValueError(f"Unknown model_type: {name}")
    return MODEL_CATALOG[name](dict(params))


def builtin_models():
    """Reference models with the default parameter sets"""
    return {
        'gbm': build_model('gbm', GBM_PARAMS),
        'gbm2d': build_model('gbm2d', GBM2D_PARAMS),
        'heston': build_model('heston', HESTON_PARAMS),
        'sabr': build_model('sabr', SABR_PARAMS),
    }


# ---------------------------------------------------------------------------
# One-step update coefficients
# ---------------------------------------------------------------------------

def euler_coeffs(model, x, n, dt, allow_point_mass=False):
    """
    Euler update X^n_{k+1} = c + m Z with c = x^n + a^n(x) dt, m = b^n(x) sqrt(dt)

    Parameters:
    -----------
    model : SdeModel
    x : np.ndarray
        Joint codewords, shape (d,) or (d, M)
    n : int
        Dimension being updated
    dt : float
        Time step
    allow_point_mass : bool
        Return m = 0 instead of raising DegenerateDiffusionError

    Returns:
    --------
    tuple of np.ndarray
        (c, m), each of shape (M,) or scalar
    """
    x = np.asarray(x, dtype=float)
    c = x[n] + model.drift(x)[n] * dt
    m = model.diffusion(x)[n] * np.sqrt(dt)
    if not allow_point_mass and np.any(m == 0.0):
        raise DegenerateDiffusionError(f"Zero diffusion in dimension {n}")
    return c, m


def wo2_coeffs(model, xn, n, dt):
    """
    Simplified weak-order 2.0 update m_bar (Z + sqrt(lam))^2 + c_bar of dimension n

    Returns:
    --------
    tuple of np.ndarray
        (mbar, cbar, lam)
    """
    if not model.autonomous[n]:
        raise ConfigurationError(f"WO2 requires dimension {n} of {model.name} to be autonomous")
    xn = np.asarray(xn, dtype=float)
    lo = model.lower_bounds[n]
    if np.isfinite(lo):
        xn = np.maximum(xn, lo + STATE_FLOOR)
    a, da, d2a, b, db, d2b = model.scalar_coefficients(n, xn)
    bdb = b * db
    if np.any(bdb == 0.0):
        raise Wo2UnsupportedError(f"b * db/dx vanishes in dimension {n}")
    lin = b + 0.5 * (da * b + a * db + 0.5 * d2b * b * b) * dt
    mbar = 0.5 * bdb * dt
    cbar = xn + (a - 0.5 * bdb) * dt + 0.5 * (a * da + 0.5 * d2a * b * b) * dt * dt - lin * lin / (2.0 * bdb)
    lam = (lin / (bdb * np.sqrt(dt))) ** 2
    return mbar, cbar, lam


if __name__ == "__main__":
    models = builtin_models()
    print("=" * 60)
    print("BUILT-IN MODELS")
    print("=" * 60)
    for key, model in models.items():
        print(f"\n{key}: x0={model.x0}, autonomous={model.autonomous}")
        print(f"  correlation:\n{model.correlation}")

    gbm = models['gbm2d']
    c, m = euler_coeffs(gbm, np.array([110.0, 90.0]), 0, 1.0 / 12.0)
    print(f"\nGBM Euler (dim 1 at 110): c={c:.6f}, m={m:.6f}")
    mbar, cbar, lam = wo2_coeffs(models['sabr'], 0.4, 1, 1.0 / 12.0)
    print(f"SABR vol WO2 at y=0.4: mbar={mbar:.7f}, cbar={cbar:.7f}, lambda={lam:.4f}")
