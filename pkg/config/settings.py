"""
Django settings for the covlap project.

Only the pieces a command-line toolkit needs are configured here: the run
record database, logging to standard error and the project defaults.
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('COVLAP_SECRET_KEY', 'covlap-local-only-not-a-secret')

DEBUG = False

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',

    # covlap modules
    'core',       # CLI, config, run records
    'symmat',     # Dense symmetric linear algebra
    'objective',  # Prior and penalized objective
    'bcd',        # Block coordinate descent
    'laplace',    # Laplace-approximated model scores
    'sampler',    # Metropolis-Hastings over structures
    'simbench',   # Simulation models and benchmark harness
    'lda',        # Discriminant analysis experiment
]

MIDDLEWARE = []

# ==========================================
# DATABASE (run records only)
# ==========================================
# 1. Data folder, overridable so tests and CI never touch the home directory
COVLAP_HOME = os.environ.get('COVLAP_HOME', os.path.join(os.path.expanduser('~'), '.covlap'))

# 2. Ensure the folder exists before Django tries to connect
os.makedirs(COVLAP_HOME, exist_ok=True)

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.path.join(COVLAP_HOME, 'runs.sqlite3'),
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# ==========================================
# LOGGING (plain lines on standard error)
# ==========================================
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {'format': '%(levelname)s %(name)s: %(message)s'},
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'plain',
        },
    },
    'root': {
        'handlers': ['stderr'],
        'level': os.environ.get('COVLAP_LOG_LEVEL', 'INFO'),
    },
}

# ==========================================
# PROJECT DEFAULTS
# ==========================================
COVLAP = {
    # Worker threads for bench/lda when --jobs is omitted
    'DEFAULT_JOBS': 1,
    # (malignant, benign) training counts of the breast-cancer experiment
    'LDA_TRAIN_COUNTS': (72, 119),
    # Environment variable that overrides config seeds
    'SEED_ENV': 'COVLAP_SEED',
}
