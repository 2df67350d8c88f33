import logging
import os

from dotenv import load_dotenv

# Load settings from .env file (if any)
load_dotenv()

DEFAULT_DATABASE_URL = "sqlite:///./fairssl_runs.db"


def thread_cap():
    """Number of sweep cells allowed to run in parallel (FAIRSSL_THREADS)."""
    raw = os.getenv("FAIRSSL_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"FAIRSSL_THREADS must be an integer, got '{raw}'")
    return max(1, value)


def database_url():
    return os.getenv("FAIRSSL_DATABASE_URL", DEFAULT_DATABASE_URL)


def configure_logging(level=None):
    level = level or os.getenv("FAIRSSL_LOG_LEVEL", "INFO")
    logging.basicConfig(
        level=level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
