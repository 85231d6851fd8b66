#!/usr/bin/env python3
"""
Configuration for the sdrme estimation library and benchmark harness
"""

import os

import numpy as np

# Base paths
INSTALL_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
MANIFEST_DIR = os.path.join(INSTALL_DIR, "config", "manifests")
OUTPUT_DIR = os.environ.get("SDRME_OUTPUT_DIR", os.path.join(INSTALL_DIR, "var", "results"))

# Logging
LOG_LEVEL = os.environ.get("SDRME_LOG_LEVEL", "INFO")
LOG_FILE = os.environ.get("SDRME_LOG_FILE")  # optional file handler
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Parallelism
DEFAULT_JOBS = int(os.environ.get("SDRME_JOBS", os.cpu_count() or 1))

# Numerics
ETA_FLOOR = 1e-12
FD_RELATIVE_STEP = 1e-5   # step = FD_RELATIVE_STEP * (1 + |theta|)
CONDITION_LIMIT = 1e12
DELTA_SNAP = 1e-12   # |delta| below this (relative to alpha, beta) counts as exactly 0

# Optimizer
GRADIENT_TOLERANCE = 1e-8
MAX_ITERATIONS = 500
MAX_POLISH_STEPS = 25

# Nonparametric plug-ins
KERNEL_ORDER = 6
BANDWIDTH_GRID_SIZE = 30
CV_MIN_SAMPLES = 10

# Convexity certification
CONVEXITY_GRID = np.logspace(-3, 3, 1001)
CONVEXITY_SLACK = 1e-12

# Models
ENUMERATION_LIMIT = 22
POISSON_X_MAX = 60

# Benchmark replication defaults at desk scale
DEFAULT_REPLICATIONS = {
    "poisson": 100,
    "poisson-misspecified": 100,
    "gengamma": 100,
    "rbm": 20,
    "flid": 10,
}

RESULTS_SCHEMA_VERSION = 1

# Complete configuration dict
CONFIG = {
    "install_dir": INSTALL_DIR,
    "manifest_dir": MANIFEST_DIR,
    "output_dir": OUTPUT_DIR,
    "log_level": LOG_LEVEL,
    "log_file": LOG_FILE,
    "jobs": DEFAULT_JOBS,

    "numerics": {
        "eta_floor": ETA_FLOOR,
        "fd_relative_step": FD_RELATIVE_STEP,
        "condition_limit": CONDITION_LIMIT,
        "delta_snap": DELTA_SNAP,
    },

    "optimizer": {
        "gradient_tolerance": GRADIENT_TOLERANCE,
        "max_iterations": MAX_ITERATIONS,
        "max_polish_steps": MAX_POLISH_STEPS,
    },

    "nonparam": {
        "kernel_order": KERNEL_ORDER,
        "bandwidth_grid_size": BANDWIDTH_GRID_SIZE,
        "cv_min_samples": CV_MIN_SAMPLES,
    },

    "models": {
        "enumeration_limit": ENUMERATION_LIMIT,
        "poisson_x_max": POISSON_X_MAX,
    },

    "bench": {
        "default_replications": DEFAULT_REPLICATIONS,
        "schema_version": RESULTS_SCHEMA_VERSION,
    },
}


def get_output_dir():
    """Get the default output directory, honouring SDRME_OUTPUT_DIR at call time"""
    return os.environ.get("SDRME_OUTPUT_DIR", OUTPUT_DIR)


def get_config():
    """Get the complete configuration"""
    return CONFIG
