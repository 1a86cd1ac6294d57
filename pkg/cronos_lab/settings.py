import os
from pathlib import Path

# Optional imports
try:
    import dj_database_url
except Exception:
    dj_database_url = None

try:
    from dotenv import load_dotenv
except Exception:
    load_dotenv = None

# -------------------------------------------------
# Base
# -------------------------------------------------
BASE_DIR = Path(__file__).resolve().parent.parent

if load_dotenv:
    load_dotenv(dotenv_path=os.path.join(BASE_DIR, ".env"))


def bool_from_env(key, default=False):
    val = os.environ.get(key)
    if val is None:
        return default
    return str(val).strip().lower() in ("1", "true", "yes", "on")


# No web surface: the key only satisfies Django's startup checks.
SECRET_KEY = (
    os.environ.get("DJANGO_SECRET_KEY")
    or os.environ.get("SECRET_KEY")
    or "cronos-lab-local-key"
)

DEBUG = bool_from_env("DEBUG", default=False)
ALLOWED_HOSTS = []

# -------------------------------------------------
# Installed apps
# -------------------------------------------------
INSTALLED_APPS = [
    "django.contrib.contenttypes",

    # Project apps
    "csi",
    "feig",
    "learning",
    "evaluation",
    "experiments",
]

# -------------------------------------------------
# Database (experiment ledger only)
# -------------------------------------------------
DATABASE_URL = os.environ.get("DATABASE_URL")

if DATABASE_URL and dj_database_url:
    DATABASES = {
        "default": dj_database_url.parse(
            DATABASE_URL,
            conn_max_age=int(os.environ.get("DB_CONN_MAX_AGE", 0)),
        )
    }
else:
    DATABASES = {
        "default": {
            "ENGINE": "django.db.backends.sqlite3",
            "NAME": BASE_DIR / "db.sqlite3",
        }
    }

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

LANGUAGE_CODE = "en-us"
TIME_ZONE = os.environ.get("TIME_ZONE", "UTC")
USE_I18N = False
USE_TZ = True

# -------------------------------------------------
# CRONOS pipeline
# -------------------------------------------------
CRONOS_OUTPUT_DIR = Path(os.environ.get("CRONOS_OUTPUT_DIR", BASE_DIR / "runs"))
CRONOS_FEATURIZE_WORKERS = int(os.environ.get("CRONOS_FEATURIZE_WORKERS", os.cpu_count() or 1))
# 0 keeps torch's own default
CRONOS_TORCH_THREADS = int(os.environ.get("CRONOS_TORCH_THREADS", 0))
CRONOS_RECORD_RUNS = bool_from_env("CRONOS_RECORD_RUNS", default=True)
CRONOS_LOG_LEVEL = os.environ.get("CRONOS_LOG_LEVEL", "INFO").upper()

# -------------------------------------------------
# Logging
# -------------------------------------------------
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "plain"},
    },
    "loggers": {
        app: {"handlers": ["console"], "level": CRONOS_LOG_LEVEL, "propagate": False}
        for app in ("csi", "feig", "learning", "evaluation", "experiments")
    },
    "root": {"handlers": ["console"], "level": "WARNING"},
}
