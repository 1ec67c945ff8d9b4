"""
Configuration file for the Product Markovian Quantization toolkit
Contains all paths, numerical defaults, and reference parameter sets
"""

from pathlib import Path

# Project root directory
PROJECT_ROOT = Path(__file__).parent.parent.resolve()

# Data directories
DATA_DIR = PROJECT_ROOT / "data"
QUOTES_DIR = DATA_DIR / "quotes"
GRIDS_DIR = DATA_DIR / "grids"

# Reports directory
REPORTS_DIR = PROJECT_ROOT / "reports"
TABLES_DIR = REPORTS_DIR / "tables"

# Default file names
DEFAULT_GRID_FILE = GRIDS_DIR / "grid.npz"

# Grid file format
GRID_FORMAT_VERSION = 1
GRID_BYTE_ORDER = "<"  # little-endian for every stored array
GRID_FLOAT_DTYPE = "<f8"

# Optimizer defaults (hybrid Newton-Raphson / accelerated Lloyd)
NR_MAX_ITERS = 25
LLOYD_MAX_ITERS = 200
GRAD_TOL = 1e-9           # relative to the initial gradient sup-norm
COND_THRESHOLD = 1e-12    # reciprocal condition number of the Hessian
ANDERSON_DEPTH = 5
ANDERSON_RIDGE = 1e-10
EMPTY_REGION_MASS = 1e-300
ROUNDOFF_FACTOR = 1e3     # multiples of machine epsilon for the gradient floor

# Laws with atoms (point-mass components, censoring at a bound) get a longer Lloyd run
ATOM_LLOYD_FACTOR = 4
ATOM_ANDERSON_DEPTH = 10

# Probability bookkeeping
WEIGHT_SUM_TOL = 1e-12
WEIGHT_RENORMALIZE_TOL = 1e-8

# Bivariate normal: arguments are clipped here, beyond double resolution of Phi
BVN_CLIP = 38.0

# WO2 coefficients are evaluated no closer than this to a zero lower bound
STATE_FLOOR = 1e-10

# Reference parameter sets
GBM_PARAMS = {
    'x0': 100.0,
    'r': 0.05,
    'sigma': 0.2,
}

GBM2D_PARAMS = {
    'x0': [110.0, 90.0],
    'sigma': [0.10, 0.30],
    'rho': -0.6,
    'r': 0.05,
}

HESTON_PARAMS = {
    's0': 100.0,
    'v0': 0.09,
    'kappa': 2.0,
    'theta': 0.09,
    'sigma': 0.6,
    'r': 0.05,
    'rho': -0.3,
}

SABR_PARAMS = {
    'f0': 100.0 * 1.1051709180756477,  # S0 * exp(r T) with S0=100, r=10%, T=1
    'y0': 0.4,
    'beta': 0.9,
    'nu': 0.4,
    'rho': -0.3,
}
SABR_SPOT = 100.0
SABR_RATE = 0.10

# Default schedules per reference model: (horizon, steps, codewords per dimension)
HESTON_SCHEDULE = (1.0, 12, (30, 15))
SABR_SCHEDULE = (1.0, 12, (60, 30))
GBM2D_SCHEDULE = (1.0, 12, (10, 20))

# Monte Carlo oracle
MC_PATHS = 100_000
MC_STEPS_PER_YEAR = 120
MC_SEED = 42
MC_BLOCK_PATHS = 10_000

# Heston characteristic-function pricer
CF_UPPER_LIMIT = 200.0
CF_ABS_TOL = 1e-10
CF_TARGET_ACCURACY = 1e-8
CF_SUBDIVISIONS = 400

# Implied volatility inversion
IV_LOWER = 1e-9
IV_UPPER = 10.0
IV_XTOL = 1e-12

# Calibration
MONEYNESS_BAND = 0.30
CALIB_MAX_EVALS = 400
CALIB_XATOL = 1e-8
CALIB_FATOL = 1e-14
CALIB_STOP_OBJECTIVE = 1e-14
PENALTY_FACTOR = 10.0
PENALTY_FLOOR = 1.0
OBJECTIVE_SENTINEL = 1e6
MIN_CALIB_STEPS = 4
CALIB_STEPS_PER_YEAR = 12

# Output tables
TABLE_FLOAT_FORMAT = '%.12g'
TABLE_SEPARATOR = ','

# CLI exit codes
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVENANCE = 3
EXIT_NUMERICAL = 4


def ensure_directories():
    """Create all necessary directories if they don't exist"""
    directories = [
        QUOTES_DIR,
        GRIDS_DIR,
        TABLES_DIR,
    ]

    for directory in directories:
        directory.mkdir(parents=True, exist_ok=True)

    print(f"✓ All directories created/verified under: {PROJECT_ROOT}")


if __name__ == "__main__":
    ensure_directories()
    print(f"\nProject Root: {PROJECT_ROOT}")
    print(f"Quotes: {QUOTES_DIR}")
    print(f"Grids: {GRIDS_DIR}")
    print(f"Tables: {TABLES_DIR}")
