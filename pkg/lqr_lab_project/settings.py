"""
Django settings for lqr_lab_project project.

The project has no web surface and no database: Django provides the settings layer
and the ``manage.py`` management commands that run the experiments.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.0/ref/settings/
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Management commands never serve requests; the key only satisfies Django's startup checks.
SECRET_KEY = os.environ.get('LQR_LAB_SECRET_KEY', 'lqr-lab-offline-only')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'lqr_lab',
]

DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

USE_TZ = True

TIME_ZONE = 'UTC'


# Logging

LOG_LEVEL = os.environ.get('LQR_LAB_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s - %(levelname)s - %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'lqr_lab': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}


# Experiment defaults. Command-line flags and --cfg files override these.

LQR_LAB = {
    'TRIALS': int(os.environ.get('LQR_LAB_TRIALS', 100)),
    'WORKERS': int(os.environ.get('LQR_LAB_WORKERS', os.cpu_count() or 1)),
    'HORIZON': 10_000,
    'SEED': 0,
    'OUTPUT_DIR': os.environ.get('LQR_LAB_OUT', str(BASE_DIR / 'results')),
    'SOLVER_TOL': 1e-6,
    'SOLVER_MAX_ITERS': 20_000,
    'FIR_LENGTH': 12,
    'RLS_LAMBDA': 1e-5,
    'SWITCH_MIN_EPOCH': 10,
    'SWITCH_DET_FACTOR': 2.0,
    'TS_TAU': 500,
}
