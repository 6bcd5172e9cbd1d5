MIN_GRID_SIZE = 8  # per-axis node count, must also be even
GRID_DIMS = (2, 3)

PERIODIC_SAMPLE_TOL = 1e-9

# cost
MAX_DISP = 0.4  # default twist window
WINDOW_MARGIN = 0.05
SINGULAR_DET = 1e-10  # det b at or below this is a SingularJet
TWIST_MIN_EIG = 1e-8
CEXP_TOL = 1e-13
CEXP_MAX_ITER = 50

# densities
MIN_DENSITY = 1e-6
MASS_TOL = 1e-12

# hodge
EIGEN_SHIFT = 1e-6
EIGEN_TOL = 1e-10
EIGEN_MAX_ITER = 500
CG_RTOL = 1e-11
CG_MAX_ITER = 20_000
SPECTRAL_GAP = 100.0
GAP_FLOOR = 1e-14  # denominator floor for gap ratios
PARITY_PENALTY_ORDER = 3
METRIC_MIN_EIG = 1e-8

# moduli
NEWTON_TOL = 1e-11
MAX_NEWTON = 25
CONTINUATION_STEP = 0.02
ARMIJO_FACTOR = 0.5
ARMIJO_SLOPE = 1e-4
ARMIJO_MAX_HALVINGS = 30
QUADRATIC_REGIME = 1e-3  # residual below which C = r_{k+1} / r_k^2 is logged
KERNEL_SINGULAR_VALUES = 6
KERNEL_REL_THRESHOLD = 1e-6
KERNEL_REL_SHIFT = 1e-12  # shift-invert pole, relative to the largest eigenvalue
DPHI_EPS = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4)

# audit
K_MAX = 8
AUDIT_SAMPLES = 1000
GAIN_TOL = 1e-12  # gains at or below this are not violations
DENSITY_MATCH_TOL = 1e-12

# cli
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CONVERGENCE = 2
EXIT_CUT_LOCUS = 3
EXIT_SPECTRAL_GAP = 4

BIN_MAGIC = b"LTFD"
