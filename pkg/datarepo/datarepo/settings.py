"""
Django settings for the datarepo project.

The project has no HTTP surface: Django provides configuration, the
management-command CLI (``dsr``) and file locking, and Django REST framework
serializers validate and render the on-disk records.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import os
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables from .env file
load_dotenv(BASE_DIR / '.env')


# Nothing is signed; Django only requires the setting to exist.
SECRET_KEY = os.getenv('SECRET_KEY', 'dsr-local-not-secret')

DEBUG = os.getenv('DEBUG', 'False').lower() == 'true'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'repository.apps.RepositoryConfig',
    'storage.apps.StorageConfig',
    'access.apps.AccessConfig',
    'datasets.apps.DatasetsConfig',
    'lineage.apps.LineageConfig',
    'workflows.apps.WorkflowsConfig',
]

MIDDLEWARE = []

# The repository keeps its own records under .dsr/; no database is used.
DATABASES = {}

REST_FRAMEWORK = {
    'UNAUTHENTICATED_USER': None,
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Repository location. When unset the CLI walks up from the working directory
# looking for a `.dsr` directory.
DSR_REPO = os.getenv('DSR_REPO') or None

# Content-defined chunking defaults, frozen into .dsr/config.json at `dsr init`.
DSR_CHUNK_MIN_SIZE = int(os.getenv('DSR_CHUNK_MIN_SIZE', 256 * 1024))
DSR_CHUNK_AVG_SIZE = int(os.getenv('DSR_CHUNK_AVG_SIZE', 1024 * 1024))
DSR_CHUNK_MAX_SIZE = int(os.getenv('DSR_CHUNK_MAX_SIZE', 4 * 1024 * 1024))

# Workflow engine
DSR_WORKER_POOL_SIZE = int(os.getenv('DSR_WORKER_POOL_SIZE', os.cpu_count() or 1))
DSR_STEP_TIMEOUT_SECONDS = float(os.getenv('DSR_STEP_TIMEOUT_SECONDS', 3600))
DSR_STDERR_TAIL_BYTES = int(os.getenv('DSR_STDERR_TAIL_BYTES', 64 * 1024))
DSR_TRIGGER_CHAIN_LIMIT = int(os.getenv('DSR_TRIGGER_CHAIN_LIMIT', 10))
DSR_DAEMON_POLL_SECONDS = float(os.getenv('DSR_DAEMON_POLL_SECONDS', 1.0))

# Abbreviated commit ids shown by the CLI.
DSR_SHORT_ID_LENGTH = int(os.getenv('DSR_SHORT_ID_LENGTH', 12))

DSR_LOG_LEVEL = os.getenv('DSR_LOG_LEVEL', 'WARNING').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'plain',
        },
    },
    'loggers': {
        app: {
            'handlers': ['stderr'],
            'level': DSR_LOG_LEVEL,
            'propagate': False,
        }
        for app in ('repository', 'storage', 'access', 'datasets', 'lineage', 'workflows')
    },
}
