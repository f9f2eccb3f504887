"""
Django settings for the matchmarket project.

The project has no web surface: it is driven through management commands
(``python manage.py simulate|stationary|bounds|compare|diagnose``) and the
settings module is the single configuration layer for the simulation and
solver services.

For more information on this file, see
https://docs.djangoproject.com/en/6.0/topics/settings/
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load .env file from the same directory as settings.py
env_path = Path(__file__).resolve().parent / '.env'
load_dotenv(dotenv_path=env_path)


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv('DJANGO_SECRET', 'matchmarket-local-only')

DEBUG = os.getenv('DEBUG', default=False)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'market',
]

# No models are stored; Django falls back to its dummy backend.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Logging
# https://docs.djangoproject.com/en/6.0/topics/logging/

MATCHMARKET_LOG_LEVEL = os.getenv('MATCHMARKET_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'market': {
            'handlers': ['console'],
            'level': MATCHMARKET_LOG_LEVEL,
            'propagate': False,
        },
    },
}


# Simulation & solver configuration

# Worker cap for replications and parameter sweeps
MATCHMARKET_THREADS = int(os.getenv('MATCHMARKET_THREADS', os.cpu_count() or 1))

# Stationary mass allowed on the truncation boundary before GridTooSmall
MATCHMARKET_LEAK_THRESHOLD = float(os.getenv('MATCHMARKET_LEAK_THRESHOLD', '1e-6'))

# Max-norm residual of pi Q accepted from a stationary solve
MATCHMARKET_SOLVER_TOLERANCE = float(os.getenv('MATCHMARKET_SOLVER_TOLERANCE', '1e-10'))

# Power iteration: successive-iterate TV and iteration cap
MATCHMARKET_POWER_TOLERANCE = float(os.getenv('MATCHMARKET_POWER_TOLERANCE', '1e-12'))
MATCHMARKET_POWER_MAX_ITER = int(os.getenv('MATCHMARKET_POWER_MAX_ITER', '2000000'))

# 'auto' solves use the direct sparse path up to this many grid states
MATCHMARKET_DIRECT_MAX_STATES = int(os.getenv('MATCHMARKET_DIRECT_MAX_STATES', '60000'))

# Pass threshold for concentration diagnostics
MATCHMARKET_TAIL_THRESHOLD = float(os.getenv('MATCHMARKET_TAIL_THRESHOLD', '0.1'))
