"""
Per-step update laws

Gaussian mixtures (Euler updates), scaled non-central chi-square mixtures
with one degree of freedom (weak-order 2.0 updates), a censoring wrapper for
state spaces bounded below, the bivariate normal distribution function and the
two-dimensional joint laws used for product-grid weights.
"""

import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.config import BVN_CLIP, WEIGHT_SUM_TOL
from src.errors import UnsupportedCoefficientError
from src.quantization.quantize_core import Distribution1D

logger = logging.getLogger(__name__)

SQRT_2PI = np.sqrt(2.0 * np.pi)
TWO_PI = 2.0 * np.pi


def _phi(z):
    """Standard normal density, 0 at +/-inf"""
    with np.errstate(over='ignore', under='ignore'):
        return np.exp(-0.5 * z * z) / SQRT_2PI


def _zphi(z):
    """z * phi(z) with the limits at +/-inf set to 0"""
    out = np.zeros_like(z)
    finite = np.isfinite(z)
    out[finite] = z[finite] * _phi(z[finite])
    return out


def _prepare(x):
    x = np.asarray(x, dtype=float)
    return x, np.atleast_1d(x).ravel()


def _finish(values, x):
    if x.ndim == 0:
        return float(values[0])
    return values.reshape(x.shape)


def _check_weights(p):
    if np.any(p < 0.0):
        raise ValueError("Mixture weights must be non-negative")
    total = p.sum()
    if abs(total - 1.0) > WEIGHT_SUM_TOL * max(1.0, p.size ** 0.5):
        raise ValueError(f"Mixture weights sum to {total!r}, not 1")


# ---------------------------------------------------------------------------
# Gaussian mixtures
# ---------------------------------------------------------------------------

class GaussianMixture(Distribution1D):
    """
    Mixture of normal laws N(c_i, m_i^2) with weights p_i

    Components with m_i = 0 are point masses at c_i.
    """

    def __init__(self, locations, scales, weights):
        self.c = np.asarray(locations, dtype=float).ravel()
        self.m = np.asarray(scales, dtype=float).ravel()
        self.p = np.asarray(weights, dtype=float).ravel()
        if not (self.c.shape == self.m.shape == self.p.shape):
            raise ValueError("Mixture parameter arrays differ in length")
        if np.any(self.m < 0.0) or not np.all(np.isfinite(self.c)):
            raise ValueError("Mixture scales must be non-negative and locations finite")
        _check_weights(self.p)
        self.point_masses = int(np.count_nonzero(self.m == 0.0))
        if self.point_masses:
            logger.debug("Gaussian mixture holds %d point-mass components", self.point_masses)

    def __len__(self):
        return self.c.size

    @property
    def has_atoms(self):
        return self.point_masses > 0

    def z_scores(self, x):
        """(x - c_i) / m_i for every argument (rows) and component (columns)"""
        x = np.asarray(x, dtype=float).ravel()[:, None]
        diff = x - self.c[None, :]
        positive = self.m > 0.0
        z = np.where(diff >= 0.0, np.inf, -np.inf)
        with np.errstate(invalid='ignore'):
            np.divide(diff, self.m[None, :], out=z, where=positive[None, :])
        return z

    def cdf(self, x):
        x, flat = _prepare(x)
        return _finish(ndtr(self.z_scores(flat)) @ self.p, x)

    def pdf(self, x):
        x, flat = _prepare(x)
        positive = self.m > 0.0
        if not np.any(positive):
            return _finish(np.zeros(flat.size), x)
        z = self.z_scores(flat)[:, positive]
        return _finish(_phi(z) @ (self.p[positive] / self.m[positive]), x)

    def lpe1(self, x):
        x, flat = _prepare(x)
        z = self.z_scores(flat)
        values = ndtr(z) @ (self.p * self.c) - _phi(z) @ (self.p * self.m)
        return _finish(values, x)

    def lpe2(self, x):
        x, flat = _prepare(x)
        z = self.z_scores(flat)
        Phi, phi = ndtr(z), _phi(z)
        values = (
            Phi @ (self.p * (self.c ** 2 + self.m ** 2))
            - phi @ (2.0 * self.p * self.c * self.m)
            - _zphi(z) @ (self.p * self.m ** 2)
        )
        return _finish(values, x)

    @property
    def mean(self):
        return float(self.p @ self.c)

    @property
    def variance(self):
        return max(float(self.p @ (self.c ** 2 + self.m ** 2)) - self.mean ** 2, 0.0)

    def z_interval(self, edges):
        """
        Standard-normal interval (lo, hi] whose probability is the component cdf at each edge

        Returns:
        --------
        tuple of np.ndarray
            Arrays of shape (components, edges)
        """
        hi = self.z_scores(edges).T
        return np.full_like(hi, -np.inf), hi


def gauss_mixture_cdf(mixture, x):
    return mixture.cdf(x)


def gauss_mixture_pdf(mixture, x):
    return mixture.pdf(x)


def gauss_mixture_lpe1(mixture, x):
    return mixture.lpe1(x)


# ---------------------------------------------------------------------------
# Non-central chi-square with one degree of freedom
# ---------------------------------------------------------------------------

def ncchi2_cdf_1dof(x, lam):
    """P(Q <= x) for Q = (Z + sqrt(lam))^2, via Phi(sqrt(x) - mu) - Phi(-sqrt(x) - mu)"""
    x = np.asarray(x, dtype=float)
    mu = np.sqrt(np.asarray(lam, dtype=float))
    s = np.sqrt(np.maximum(x, 0.0))
    return np.where(x > 0.0, ndtr(s - mu) - ndtr(-s - mu), 0.0)


def ncchi2_pdf_1dof(x, lam):
    x = np.asarray(x, dtype=float)
    mu = np.sqrt(np.asarray(lam, dtype=float))
    positive = x > 0.0
    s = np.sqrt(np.where(positive, x, 1.0))
    with np.errstate(divide='ignore', invalid='ignore'):
        density = (_phi(s - mu) + _phi(s + mu)) / (2.0 * s)
    return np.where(positive & np.isfinite(x), density, 0.0)


def _truncated_square_moments(s, mu):
    """
    E[W^2 1{|W|<=s}] and E[W^4 1{|W|<=s}] for W ~ N(mu, 1), plus P(|W|<=s)

    Uses J_k = int_a^b z^k phi(z) dz on (a, b) = (-s - mu, s - mu), built by
    J_k = (k-1) J_{k-2} + a^{k-1} phi(a) - b^{k-1} phi(b).
    """
    a, b = -s - mu, s - mu
    finite = np.isfinite(s)
    phi_a, phi_b = _phi(a), _phi(b)

    def edge(k):
        out = np.zeros_like(s)
        out[finite] = a[finite] ** k * phi_a[finite] - b[finite] ** k * phi_b[finite]
        return out

    J0 = ndtr(b) - ndtr(a)
    J1 = edge(0)
    J2 = J0 + edge(1)
    J3 = 2.0 * J1 + edge(2)
    J4 = 3.0 * J2 + edge(3)
    first = mu ** 2 * J0 + 2.0 * mu * J1 + J2
    second = mu ** 4 * J0 + 4.0 * mu ** 3 * J1 + 6.0 * mu ** 2 * J2 + 4.0 * mu * J3 + J4
    return J0, first, second


class Wo2Mixture(Distribution1D):
    """
    Mixture of scaled non-central chi-square laws m_i (Z + sqrt(lam_i))^2 + c_i

    Scales must be strictly positive; the support starts at min c_i.
    """

    def __init__(self, mbar, cbar, lam, weights):
        self.mbar = np.asarray(mbar, dtype=float).ravel()
        self.cbar = np.asarray(cbar, dtype=float).ravel()
        self.lam = np.asarray(lam, dtype=float).ravel()
        self.p = np.asarray(weights, dtype=float).ravel()
        if not (self.mbar.shape == self.cbar.shape == self.lam.shape == self.p.shape):
            raise ValueError("Mixture parameter arrays differ in length")
        if np.any(~(self.mbar > 0.0)):
            raise UnsupportedCoefficientError(
                f"WO2 scale must be strictly positive (min {self.mbar.min()!r})"
            )
        if np.any(self.lam < 0.0) or not np.all(np.isfinite(self.lam)):
            raise ValueError("Non-centrality must be finite and non-negative")
        _check_weights(self.p)
        self.mu = np.sqrt(self.lam)
        self.support = (float(self.cbar.min()), np.inf)

    def __len__(self):
        return self.cbar.size

    def _q(self, flat):
        return (flat[:, None] - self.cbar[None, :]) / self.mbar[None, :]

    def cdf(self, x):
        x, flat = _prepare(x)
        return _finish(ncchi2_cdf_1dof(self._q(flat), self.lam[None, :]) @ self.p, x)

    def pdf(self, x):
        x, flat = _prepare(x)
        dens = ncchi2_pdf_1dof(self._q(flat), self.lam[None, :])
        return _finish(dens @ (self.p / self.mbar), x)

    def _moments(self, flat):
        q = self._q(flat)
        s = np.sqrt(np.maximum(q, 0.0))
        mu = np.broadcast_to(self.mu[None, :], s.shape)
        return _truncated_square_moments(s, mu)

    def lpe1(self, x):
        x, flat = _prepare(x)
        F, EQ, _ = self._moments(flat)
        return _finish(EQ @ (self.p * self.mbar) + F @ (self.p * self.cbar), x)

    def lpe2(self, x):
        x, flat = _prepare(x)
        F, EQ, EQ2 = self._moments(flat)
        values = (
            EQ2 @ (self.p * self.mbar ** 2)
            + EQ @ (2.0 * self.p * self.mbar * self.cbar)
            + F @ (self.p * self.cbar ** 2)
        )
        return _finish(values, x)

    @property
    def mean(self):
        return float(self.p @ (self.mbar * (1.0 + self.lam) + self.cbar))

    def z_interval(self, edges):
        """Z-interval (-mu - sqrt(q), -mu + sqrt(q)] of each component at each edge"""
        q = self._q(np.asarray(edges, dtype=float).ravel()).T
        s = np.sqrt(np.maximum(q, 0.0))
        mu = self.mu[:, None]
        return -mu - s, -mu + s


def wo2_mixture_cdf(mixture, x):
    return mixture.cdf(x)


def wo2_mixture_pdf(mixture, x):
    return mixture.pdf(x)


def wo2_mixture_lpe1(mixture, x):
    return mixture.lpe1(x)


# ---------------------------------------------------------------------------
# Censoring at a state-space lower bound
# ---------------------------------------------------------------------------

class CensoredDist(Distribution1D):
    """
    Law of max(X, lo): the mass of X below lo becomes an atom at lo
    """

    def __init__(self, base, lower):
        self.base = base
        self.lower = float(lower)
        self.support = (self.lower, float(base.support[1]))
        self.atom = float(base.cdf(self.lower))
        self._m1_lo = float(base.lpe1(self.lower))
        self._m2_lo = float(base.lpe2(self.lower))

    def __len__(self):
        return len(self.base)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= self.lower, self.base.cdf(x), 0.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > self.lower, self.base.pdf(x), 0.0)

    def lpe1(self, x):
        x = np.asarray(x, dtype=float)
        value = self.lower * self.atom + self.base.lpe1(x) - self._m1_lo
        return np.where(x >= self.lower, value, 0.0)

    def lpe2(self, x):
        x = np.asarray(x, dtype=float)
        value = self.lower ** 2 * self.atom + self.base.lpe2(x) - self._m2_lo
        return np.where(x >= self.lower, value, 0.0)

    @property
    def has_atoms(self):
        return self.atom > 0.0 or self.base.has_atoms

    def z_interval(self, edges):
        return self.base.z_interval(edges)

    @property
    def p(self):
        return self.base.p


def censor(dist, lower):
    """Wrap dist in CensoredDist when its support reaches below a finite lower bound"""
    if lower is None or not np.isfinite(lower) or dist.support[0] >= lower:
        return dist
    return CensoredDist(dist, lower)


# ---------------------------------------------------------------------------
# Bivariate normal distribution function
# ---------------------------------------------------------------------------

# Gauss-Legendre half-rules with 3, 6 and 10 nodes on (-1, 0)
_GL_NODES = (
    np.array([-0.9324695142031522, -0.6612093864662647, -0.2386191860831970]),
    np.array([
        -0.9815606342467191, -0.9041172563704750, -0.7699026741943050,
        -0.5873179542866171, -0.3678314989981802, -0.1252334085114692,
    ]),
    np.array([
        -0.9931285991850949, -0.9639719272779138, -0.9122344282513259,
        -0.8391169718222188, -0.7463319064601508, -0.6360536807265150,
        -0.5108670019508271, -0.3737060887154196, -0.2277858511416451,
        -0.07652652113349733,
    ]),
)
_GL_WEIGHTS = (
    np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    np.array([
        0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
        0.2031674267230659, 0.2334925365383547, 0.2491470458134029,
    ]),
    np.array([
        0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
        0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
        0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
        0.1527533871307259,
    ]),
)


def _bvn_core(h, k, r):
    """P(X > h, Y > k) for finite h, k and |r| < 1 (Drezner-Wesolowsky / Genz)"""
    ar = abs(r)
    rule = 0 if ar < 0.3 else (1 if ar < 0.75 else 2)
    nodes, weights = _GL_NODES[rule], _GL_WEIGHTS[rule]
    hk = h * k

    if ar < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = np.arcsin(r)
        bvn = np.zeros_like(h)
        for x, w in zip(nodes, weights):
            for sign in (1.0, -1.0):
                sn = np.sin(asr * (sign * x + 1.0) / 2.0)
                bvn += w * np.exp((sn * hk - hs) / (1.0 - sn * sn))
        return bvn * asr / (2.0 * TWO_PI) + ndtr(-h) * ndtr(-k)

    if r < 0.0:
        k = -k
        hk = -hk
    as_ = (1.0 - r) * (1.0 + r)
    a = np.sqrt(as_)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    bvn = a * np.exp(-(bs / as_ + hk) / 2.0) * (
        1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0
    )
    b = np.sqrt(bs)
    tail = np.exp(-hk / 2.0) * np.sqrt(TWO_PI) * ndtr(-b / a) * b * (
        1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0
    )
    bvn = bvn - np.where(hk > -160.0, tail, 0.0)
    a = a / 2.0
    for x, w in zip(nodes, weights):
        xs = (a * (x + 1.0)) ** 2
        rs = np.sqrt(1.0 - xs)
        bvn += a * w * (
            np.exp(-bs / (2.0 * xs) - hk / (1.0 + rs)) / rs
            - np.exp(-(bs / xs + hk) / 2.0) * (1.0 + c * xs * (1.0 + d * xs))
        )
        xs = as_ * (1.0 - x) ** 2 / 4.0
        rs = np.sqrt(1.0 - xs)
        bvn += a * w * np.exp(-(bs / xs + hk) / 2.0) * (
            np.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs - (1.0 + c * xs * (1.0 + d * xs))
        )
    bvn = -bvn / TWO_PI
    if r > 0.0:
        return bvn + ndtr(-np.maximum(h, k))
    return -bvn + np.maximum(0.0, ndtr(-h) - ndtr(-k))


def bivariate_normal_cdf(x, y, rho):
    """
    Phi_2(x, y; rho), vectorized over x and y

    Parameters:
    -----------
    x, y : float or array-like
        Upper integration limits, broadcast together; +/-inf allowed
    rho : float
        Correlation in [-1, 1]

    Returns:
    --------
    float or np.ndarray
        Joint probability P(X <= x, Y <= y)
    """
    rho = float(rho)
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"Correlation must lie in [-1, 1], got {rho}")
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    shape = x.shape
    x, y = np.atleast_1d(x).ravel(), np.atleast_1d(y).ravel()

    # beyond the clip level Phi is 0 or 1 in double precision
    lo_x, lo_y = x <= -BVN_CLIP, y <= -BVN_CLIP
    hi_x, hi_y = x >= BVN_CLIP, y >= BVN_CLIP
    out = np.zeros(x.shape)
    only_y = hi_x & ~lo_y
    only_x = hi_y & ~lo_x & ~hi_x
    out[only_y] = ndtr(y[only_y])
    out[only_x] = ndtr(x[only_x])
    core = ~(lo_x | lo_y | hi_x | hi_y)

    if np.any(core):
        xc, yc = x[core], y[core]
        if rho == 0.0:
            out[core] = ndtr(xc) * ndtr(yc)
        elif rho == 1.0:
            out[core] = ndtr(np.minimum(xc, yc))
        elif rho == -1.0:
            out[core] = np.maximum(ndtr(xc) - ndtr(-yc), 0.0)
        else:
            with np.errstate(over='ignore', under='ignore', invalid='ignore'):
                out[core] = _bvn_core(-xc, -yc, rho)
    np.clip(out, 0.0, 1.0, out=out)
    return float(out[0]) if shape == () else out.reshape(shape)


# ---------------------------------------------------------------------------
# Two-dimensional joint laws
# ---------------------------------------------------------------------------

def _scheme_of(mixture):
    base = mixture.base if isinstance(mixture, CensoredDist) else mixture
    return 'wo2' if isinstance(base, Wo2Mixture) else 'euler'


def _interval_mass(lo1, hi1, lo2, hi2, rho):
    """P(Z1 in (lo1, hi1], Z2 in (lo2, hi2]) for correlated standard normals"""
    value = bivariate_normal_cdf(hi1, hi2, rho)
    if not np.all(np.isneginf(lo1)):
        value = value - bivariate_normal_cdf(lo1, hi2, rho)
    if not np.all(np.isneginf(lo2)):
        value = value - bivariate_normal_cdf(hi1, lo2, rho)
        if not np.all(np.isneginf(lo1)):
            value = value + bivariate_normal_cdf(lo1, lo2, rho)
    return value


@dataclass(frozen=True)
class JointLaw2D:
    """
    Joint one-step law of two coordinates: component i of `first` and component i
    of `second` share the weight p_i and their Gaussian drivers have correlation rho
    """
    first: Distribution1D
    second: Distribution1D
    rho: float

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"Joint-law correlation must lie in (-1, 1), got {self.rho}")
        if len(self.first) != len(self.second):
            raise ValueError("Both dimensions need the same number of components")

    @property
    def variant(self):
        return f"{_scheme_of(self.first)}-{_scheme_of(self.second)}"

    @property
    def weights(self):
        return self.first.p

    def cdf(self, x, y):
        """Sum over components of p_i P(X1 <= x, X2 <= y | component i)"""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        lo1, hi1 = self.first.z_interval(x.ravel())
        lo2, hi2 = self.second.z_interval(y.ravel())
        mass = _interval_mass(lo1, hi1, lo2, hi2, self.rho)
        values = self.weights @ mass
        return float(values[0]) if x.ndim == 0 else values.reshape(x.shape)

    def component_rectangles(self, edges_x, edges_y, chunk=64):
        """
        Probability of every rectangle (e_x[a], e_x[a+1]] x (e_y[b], e_y[b+1]] per component

        Returns:
        --------
        np.ndarray
            Array of shape (components, len(edges_x) - 1, len(edges_y) - 1)
        """
        edges_x = np.asarray(edges_x, dtype=float)
        edges_y = np.asarray(edges_y, dtype=float)
        lo1, hi1 = self.first.z_interval(edges_x)
        lo2, hi2 = self.second.z_interval(edges_y)
        n = lo1.shape[0]
        out = np.empty((n, edges_x.size - 1, edges_y.size - 1))
        for start in range(0, n, chunk):
            sl = slice(start, min(start + chunk, n))
            corner = _interval_mass(
                lo1[sl, :, None], hi1[sl, :, None], lo2[sl, None, :], hi2[sl, None, :], self.rho
            )
            out[sl] = corner[:, 1:, 1:] - corner[:, :-1, 1:] - corner[:, 1:, :-1] + corner[:, :-1, :-1]
        return out


def joint_cdf_2d(law, x, y):
    return law.cdf(x, y)


if __name__ == "__main__":
    print("Bivariate normal checks:")
    print(f"  Phi2(0, 0; 0.5) = {bivariate_normal_cdf(0.0, 0.0, 0.5):.15f} (1/3)")
    print(f"  Phi2(1, -1; 0)  = {bivariate_normal_cdf(1.0, -1.0, 0.0):.15f}")

    mix = GaussianMixture([0.0, 2.0], [1.0, 1.0], [0.3, 0.7])
    print(f"\nGaussian mixture cdf(1) = {mix.cdf(1.0):.6f} (0.363462)")
    chi = Wo2Mixture([1.0], [0.0], [0.0], [1.0])
    print(f"Central chi-square cdf(1) = {chi.cdf(1.0):.7f} (0.6826895)")
