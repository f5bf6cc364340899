import math

# Integrator (projected Heun with renormalization)
DEFAULT_DT = 1e-2
DEFAULT_T_FINAL = 20.0
DEFAULT_SNAPSHOT_EVERY = 0.5
DEFAULT_STOP_WINDOW = 1.0  # time units
DEFAULT_STOP_REL_TOL = 1e-8
DEFAULT_MASTER_SEED = 20250101
DEFAULT_BLOCK_ROWS = 64  # rows per force block; fixes reduction order
DEFAULT_WORKERS = 1

# Model
DEFAULT_BETA = 1.0
DEFAULT_DIM = 3
DEFAULT_OMEGA = 2 * math.pi
DEFAULT_PLANE = (0, 1)
DEFAULT_M_PER_AUX = 4
DEFAULT_K_PR = 3
DEFAULT_N_LIST = [64, 128, 256]
DEFAULT_SEEDS = 100

# Bias functions
DEFAULT_BIAS_LAMBDA = 1.0
DEFAULT_BIAS_EPS = 0.02
DEFAULT_BIAS_ELL = 0.1

# Phase fields: psi(s) = -(rate * s + amplitude * sin(2 pi frequency s))
DEFAULT_PHASE_RATE = 2 * math.pi
DEFAULT_PHASE_AMPLITUDE = 0.8
DEFAULT_PHASE_FREQUENCY = 2
DEFAULT_PHASE_GRID = 4097

# Toeplitz kernels
DEFAULT_TOEPLITZ_M = 1
DEFAULT_TOEPLITZ_MAX_FREQ = 16

# Tolerances
UNIT_NORM_TOL = 1e-12
GAUGE_ORTHO_TOL = 1e-10
PROMPT_GAUGE_TOL = 1e-8
ASCENT_TOL = 1e-9
CLUSTER_MEAN_TOL = 1e-12

# Exp2 classification thresholds
DEFAULT_DIRAC_GAP = 1e-3
DEFAULT_CIRCLE_RESIDUAL = 1e-2
DEFAULT_CURVE_DIAMETER = 1e-3
DEFAULT_CLUSTER_RADIUS = 0.05
DEFAULT_EXP2_N = 256
DEFAULT_EXP2_T_FINAL = 100.0
DEFAULT_EXP2_SCENARIOS = [
    "baseline",
    "distance_bias",
    "toeplitz",
    "rope",
    "generalized_rope",
    "prompt",
]

# Dobrushin trend
DEFAULT_DOBRUSHIN_N_LIST = [64, 128, 256]
DEFAULT_DOBRUSHIN_N_MAX = 512
DEFAULT_DOBRUSHIN_T = 5.0
DEFAULT_DOBRUSHIN_SEEDS = 10
DEFAULT_DOBRUSHIN_MODEL = "rope"

# Metastability
DEFAULT_METASTAB_K = 3
DEFAULT_METASTAB_SIZE = 16  # particles per cluster
DEFAULT_METASTAB_SIGMA0 = math.pi / 3
DEFAULT_METASTAB_R0 = 0.05
DEFAULT_METASTAB_BETAS = [2.0, 3.0, 4.0]
DEFAULT_METASTAB_T_FINAL = 400.0
DEFAULT_PLATEAU_MIN_DURATION = 1.0

# Maximizers
DEFAULT_FIBONACCI_POINTS = 128
DEFAULT_PERTURB_TRIALS = 1000
DEFAULT_PERTURB_MAGNITUDE = 1e-2
DEFAULT_DIRACIZE_MAX_SWEEPS = 100

DEFAULT_OUTPUT_PATH = "./output"
DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_MAXIMIZER_TRIALS = 100
