

import os
import dotenv

dotenv.load_dotenv()

# ===== RUNTIME =====
# Caps torch intra-op threads and joblib workers
HAR_THREADS = int(os.getenv("HAR_THREADS", "1"))
HAR_LOG_LEVEL = os.getenv("HAR_LOG_LEVEL", "INFO").upper()
HAR_OUTPUT_DIR = os.getenv("HAR_OUTPUT_DIR", "runs")
HAR_SEED = int(os.getenv("HAR_SEED", "0"))

# ===== SIGNAL =====
TARGET_RATE = int(os.getenv("HAR_TARGET_RATE", "30"))
WINDOW_SECONDS = int(os.getenv("HAR_WINDOW_SECONDS", "10"))
WINDOW_LENGTH = TARGET_RATE * WINDOW_SECONDS

# ===== OPTIMISATION =====
BASE_LR = float(os.getenv("HAR_BASE_LR", "1e-3"))
REF_BATCH = int(os.getenv("HAR_REF_BATCH", "256"))
BURN_IN_EPOCHS = float(os.getenv("HAR_BURN_IN_EPOCHS", "5"))
PATIENCE = int(os.getenv("HAR_PATIENCE", "5"))

# ===== STORE FORMATS =====
STORE_MAGIC = b"HARW"
STORE_VERSION = 1
CHECKPOINT_MAGIC = b"HARC"
CHECKPOINT_VERSION = 1
