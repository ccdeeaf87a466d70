import logging
import os

# Version stamped into every report manifest
TOOL_VERSION = "1.0.0"

# Logging
LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
LOG_LEVEL = os.getenv("PEST_LOG_LEVEL", "WARNING")

# Viola-Jones detection defaults (GAP9 deployment)
WINDOW_SIZE = 20
PYRAMID_SCALE_FACTOR = 1.1
PYRAMID_LEVELS = 5
MAX_DETECTION_PX = 30
TILE_OVERLAP = 20
SCRATCH_BUDGET_BYTES = 99_600
# Cascade parameters stay resident next to the tile integral image
CASCADE_RESIDENT_BYTES = 3_560
SCAN_STEP = 1
DETECT_WORKERS = 8

# Cascade training defaults
TRAIN_STAGES = 15
TRAIN_MIN_DETECTION_RATE = 0.995
TRAIN_MAX_FALSE_POSITIVE_RATE = 0.5
TRAIN_MAX_WEAK_PER_STAGE = 50
TRAIN_FEATURE_CHUNK = 1024
TRAIN_FEATURE_FRACTION = 1.0
TRAIN_POOL_SAMPLE_WINDOWS = 20_000
TRAIN_MAX_MINING_WINDOWS = 2_000_000
TRAIN_SEED = 0

# Evaluation
EVAL_IOU_THRESHOLD = 0.01

# CNN scheduling budgets (GAP9 large-memory configuration)
CNN_L1_BYTES = 115_600
CNN_L2_BYTES = 1_200_000
DEFAULT_PLATFORM = "gap9"
DEFAULT_GRAPH = "mbnv3_ssdlite_320x240"

# Duty cycle and battery (GAP9 trap node)
SECONDS_PER_DAY = 86_400
WAKE_PERIOD_S = 30
COUNTER_PAYLOAD_BYTES = 17
IMAGE_PAYLOAD_BYTES = 12_700
DETECTIONS_PER_DAY = 33
TX_MJ_PER_BYTE = 1.0
SLEEP_POWER_UW = 43.0
BATTERY_CAPACITY_MAH = 1000
BATTERY_VOLTAGE_V = 3.7
DEFAULT_SCENARIO = "gap9_vj_30s"


# ─── DATA FILE LOCATIONS ───────────────────────────────────────────────────
def get_data_path():
    """
    Returns the folder with the shipped data files
    (platforms, graphs, scenarios).
    """
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")


def get_platform_search_path():
    """
    Returns the list of folders searched for platform description files.
    Entries of PEST_PLATFORM_PATH (os.pathsep separated) come first,
    the shipped platforms folder last.
    """
    folders = []
    extra = os.getenv("PEST_PLATFORM_PATH", "")
    for entry in extra.split(os.pathsep):
        if entry.strip():
            folders.append(entry.strip())
    folders.append(os.path.join(get_data_path(), "platforms"))
    return folders


def find_platform_file(name):
    """Returns the first <name>.xml on the platform search path, or None."""
    for folder in get_platform_search_path():
        candidate = os.path.join(folder, f"{name}.xml")
        if os.path.isfile(candidate):
            return candidate
    return None


def get_graph_path(name=DEFAULT_GRAPH):
    """Returns the path of a shipped graph description."""
    return os.path.join(get_data_path(), "graphs", f"{name}.json")


def get_scenario_path(name):
    """Returns the path of a shipped duty-cycle scenario."""
    return os.path.join(get_data_path(), "scenarios", f"{name}.xml")


def setup_logging(level=None):
    """Configure the root logger once for command-line runs."""
    logging.basicConfig(format=LOG_FORMAT, level=(level or LOG_LEVEL).upper())
