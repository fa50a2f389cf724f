"""Constants shared across the manipulation primitives system."""

# Trial CSV channel layout
VELOCITY_CHANNELS = ("vx", "vy", "vz")
ANGULAR_CHANNELS = ("wx", "wy", "wz")
PRESSURE_CHANNELS = tuple(f"F{i}" for i in range(1, 19))
BEND_CHANNELS = tuple(f"b{i}" for i in range(1, 9))
TRIAL_COLUMNS = ("t",) + VELOCITY_CHANNELS + ANGULAR_CHANNELS + PRESSURE_CHANNELS + BEND_CHANNELS

# Canonical primitive-feature alphabet (24 base symbols)
REACH_SYMBOLS = ("Vx+", "Vx-", "Vy+", "Vy-", "Vz+", "Vz-")
ROTATE_SYMBOLS = ("Wx+", "Wx-", "Wy+", "Wy-", "Wz+", "Wz-")
GRASP_SYMBOLS = ("Gl", "Gm", "Gh")
RELEASE_SYMBOLS = ("Rl", "Rm", "Rh")
BEND_SYMBOLS = ("Bl", "Bm", "Bh")
EXTEND_SYMBOLS = ("El", "Em", "Eh")
BASE_SYMBOLS = (REACH_SYMBOLS + ROTATE_SYMBOLS + GRASP_SYMBOLS + RELEASE_SYMBOLS
                + BEND_SYMBOLS + EXTEND_SYMBOLS)
COMPOUND_SEPARATOR = "&"

# Recognized manipulation actions
ACTION_LABELS = (
    "CloseCabinet",
    "CloseDrawer",
    "OpenCabinet",
    "OpenDrawer",
    "PickPlace",
    "Pour",
    "Spray",
    "Stir",
)

# Level quantization fractions of the training-set average maximum
LEVEL_FRACTIONS = {"low": 0.15, "mid": 0.45, "high": 0.75}

# File names inside dataset / report directories
MANIFEST_FILE = "manifest.tsv"
DATASET_META_FILE = "dataset.meta"
TRIAL_META_SUFFIX = ".meta"
LEVELS_SUFFIX = ".levels"
BANK_FORMAT_HEADER = "manipulation-primitives-bank"
BANK_FORMAT_VERSION = 1

# Numeric formats
CSV_FLOAT_FORMAT = "%.10g"
BANK_FLOAT_FORMAT = ".17g"
