import os

try:
    from dotenv import load_dotenv

    load_dotenv()
except ImportError:
    pass

LOG_FILE_NAME = os.getenv("LOG_FILE_NAME", "iob_sim.log")
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_BASE_DIR = os.getenv("LOG_BASE_DIR", "log")

# Group backend: "prod" (NIST P-256) or "test467" (order-233 subgroup of Z_467*)
CRYPTO_BACKEND = os.getenv("IOB_CRYPTO_BACKEND", "prod")
# Any hashlib name with a 256-bit digest
HASH_NAME = os.getenv("IOB_HASH", "sha256")

SEED = int(os.getenv("IOB_SEED", "20240601"))
OUTPUT_DIR = os.getenv("IOB_OUTPUT_DIR", "results")
GOWALLA_PATH = os.getenv("IOB_GOWALLA_PATH")
