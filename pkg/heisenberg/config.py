"""
Heisenberg Fractional Toolkit - Configuration
"""
import logging
import os
from datetime import datetime
from pathlib import Path

# Project paths
PROJECT_DIR = Path(__file__).parent.parent
DATA_DIR = Path(os.environ.get("HEIS_DATA_DIR", PROJECT_DIR / "data"))
LOGS_DIR = Path(os.environ.get("HEIS_LOGS_DIR", PROJECT_DIR / "logs"))

# Worker threads for chunked estimation and row-block assembly
WORKERS = int(os.environ.get("HEIS_WORKERS", "4"))
LOG_LEVEL = os.environ.get("HEIS_LOG_LEVEL", "INFO")

# =============================================================================
# GROUP
# =============================================================================

DEFAULT_N = 1
DEFAULT_S = 0.25

# =============================================================================
# BUBBLE FAMILY
# =============================================================================

BUBBLE_C = 1.0          # constant in front of the extremal profile
CUTOFF_RADIUS = 1.0     # r: u_eps = U_eps on B_r, 0 outside B_2r
DOMAIN_RADIUS = 4.0     # Omega = B_4r(0)
DEFAULT_EPS = 0.25

# Dilation scale sigma of the eps family:
#   "sweep"   sigma = SWEEP_SIGMA, so eps * sigma << r across the default grid
#   "unit"    sigma = 1
#   "sobolev" sigma = S^(1/2s)
SIGMA_MODES = ("sweep", "unit", "sobolev")
SIGMA_MODE = "sweep"
SWEEP_SIGMA = 0.125
DROP_SIGMA = 1.0        # strict-drop margin scales like sigma^Q; checked at sigma = 1

# =============================================================================
# QUADRATURE
# =============================================================================

METHOD_MC = "monte-carlo-stratified"
METHOD_GRID = "tensor-grid"

DEFAULT_SAMPLES = 1_000_000
MIN_SAMPLES = 1_000
DEFAULT_ANNULI = 24
MIN_ANNULI = 4

CHUNK_SIZE = 1 << 15          # samples per RNG stream / work unit

# Full-space fields are truncated at TRUNCATION_FACTOR * scale, doubled
# until the tail bound drops under TAIL_FRACTION * stderr
TRUNCATION_FACTOR = 1024.0
TAIL_FRACTION = 0.1
MAX_TRUNCATION_DOUBLINGS = 8

# Stream purposes (first key word after the seed)
STREAM_XI = 1
STREAM_ZETA = 2
STREAM_VOLUME = 3
STREAM_LP = 4
STREAM_L2 = 5
STREAM_DOMAIN = 6
STREAM_PAIRS = 7
STREAM_SUP = 8

# =============================================================================
# DISCRETE SOLVER
# =============================================================================

MIN_POINTS = 50
DEFAULT_POINTS = 2000
EIGEN_TOL = 1e-8
EIGEN_MAX_ITER = 2000
QUOTIENT_TOL = 1e-7
QUOTIENT_MAX_ITER = 500
STALL_WINDOW = 25
STALL_DECREASE = 1e-12
EXTERIOR_DIRECTIONS = 64      # fixed directions for the exterior diagonal
ASSEMBLY_BLOCK = 256          # rows per assembly block
START_EPS = 0.25              # u_eps used to start the quotient descent

# =============================================================================
# EPS SWEEPS & VERDICTS
# =============================================================================

DEFAULT_EPS_GRID = [0.5, 0.35, 0.25, 0.18, 0.125]
MIN_GRID_POINTS = 4
MAX_GRID_RATIO = 0.7071067811865476 + 0.02   # ~1/sqrt(2), small slack
EXPONENT_TOL = 0.15
MIN_R_SQUARED = 0.95
SIGNAL_SIGMAS = 2.0           # |value - baseline| must exceed this many stderr
DROP_SIGMAS = 3.0             # strict-drop significance
MAX_CONSTANT_GROWTH = 2.0     # bounded constants may not grow more than 2x across the grid
SUP_SAMPLES = 10_000
PAIR_SAMPLES = 100_000
LAMBDA_FRACTION = 0.5         # lambda = 0.5 * lambda1 when not given

# =============================================================================
# CLI
# =============================================================================

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INCONCLUSIVE = 2
EXIT_NONCONVERGENCE = 3
EXIT_HYPOTHESIS = 4

LEMMA_LABELS = ["L3", "L4", "L5", "L6", "L7a", "L7b", "drop"]


def setup_logging(name: str) -> logging.Logger:
    """Log to logs/<name>_<date>.log and stderr"""
    LOGS_DIR.mkdir(parents=True, exist_ok=True)
    log_file = LOGS_DIR / f"{name}_{datetime.now().strftime('%Y%m%d')}.log"
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )
    return logging.getLogger(name)
