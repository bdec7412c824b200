# src/config.py
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Paths
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = BASE_DIR / "data"
CONFIGS_DIR = BASE_DIR / "configs"

# Only env override: where results go
OUTPUT_DIR = Path(os.getenv("COSTA_OUTPUT_DIR", str(BASE_DIR / "outputs")))

# Subsolver defaults
SUBSOLVER_TOL = 1e-8
SUBSOLVER_MAX_INNER = 5000
SUBSOLVER_MAX_OUTER = 60
SUBSOLVER_PENALTY_INIT = 10.0
SUBSOLVER_PENALTY_GROWTH = 8.0
SUBSOLVER_PENALTY_MAX = 1e8
SUBSOLVER_INFEASIBLE_TOL = 1e-4

# Validator defaults
FD_STEP = 1e-4
MAJORIZATION_TOL = 1e-10
ANCHOR_EQUALITY_TOL = 1e-12
STRONG_CONVEXITY_TOL = 1e-10
EQUALITY_TOL = 1e-6
VALIDATION_SAMPLES = 10_000

# Reporting defaults
MC_SAMPLES = 32
LOG_EVERY = 100

# Problem defaults
MCP_SMOOTHING = 1e-3
MCP_LEVEL = 20.0
CURVATURE_SAFETY = 1.5
NOISE_TRUNCATION = 3.0

# LIBSVM downloads
LIBSVM_BASE_URL = "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets"
DOWNLOAD_TIMEOUT = 60
