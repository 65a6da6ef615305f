#!/usr/bin/env python3
# settings.py - Environment-driven locations and hyperparameter defaults

import os
from pathlib import Path

SOCKET_OUTPUT_BASE = os.getenv("SOCKET_OUTPUT_BASE", str(Path.cwd() / "results"))
SOCKET_LOG_LEVEL = os.getenv("SOCKET_LOG_LEVEL", "info").lower()

OUTPUT_PATH = Path(SOCKET_OUTPUT_BASE)

DATA_DIR = OUTPUT_PATH / "data"
RUNS_DIR = OUTPUT_PATH / "runs"
THEORY_DIR = OUTPUT_PATH / "theory"

# Recommended operating point: P=8, L=60, tau in 0.3-0.7
DEFAULT_P = 8
DEFAULT_L = 60
DEFAULT_TAU = 0.5
DEFAULT_BINS = 50
DEFAULT_K_GRID = (16, 32, 64, 128, 256)

# Sink + local window retained tokens, combined, for emulation runs
EMULATION_RETAINED = 128

FORMAT_VERSION = "1"


def default_seed():
    """Master seed fallback: SOCKET_SEED, else 0."""
    raw = os.getenv("SOCKET_SEED", "")
    if not raw.strip():
        return 0
    return int(raw, 0)


def default_threads():
    raw = os.getenv("SOCKET_THREADS", "")
    return max(1, int(raw)) if raw.strip() else 1


def ensure_directories():
    """Create all output directories if they don't exist."""
    for directory in [DATA_DIR, RUNS_DIR, THEORY_DIR]:
        directory.mkdir(parents=True, exist_ok=True)
