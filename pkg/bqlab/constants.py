DEV_MODE = False
WORKERS = 1
HIGHLIGHT = "blue_violet"
ENV_PREFIX = "BQLAB"

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_INVARIANT = 3

# Run directory layout
CONFIG_ECHO = "config.echo"
DIAGNOSTICS_CSV = "diagnostics.csv"
GROWTH_CSV = "growth.csv"
LOW_DISSIPATION_CSV = "low_dissipation.csv"
DIAGNOSE_CSV = "diagnose.csv"
DIAGNOSE_LEMMAS_CSV = "diagnose_lemmas.csv"
STATUS_FILE = "status.json"
SNAPSHOT_DIR = "snapshots"

# Field snapshot format
SNAPSHOT_MAGIC = "BQP1"
SNAPSHOT_HEADER_BYTES = 64

# Interface width in grid cells
EPSILON_FACTOR = 3.0
MEAN_TOLERANCE = 1e-10
TINY = 1e-12

PESTOV_IONIN_TOLERANCE = 1e-2
CURVATURE_LEMMA_TOLERANCE = 0.02
PERIMETER_LEMMA_TOLERANCE = 0.05
DUALITY_TOLERANCE = 1e-3
