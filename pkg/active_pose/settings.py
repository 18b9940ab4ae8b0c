"""
Django settings for the active_pose project.

Generated by 'django-admin startproject' using Django 5.2.4.

For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    'ACTIVE_POSE_SECRET_KEY', 'django-insecure-5u&k1d0v$z@3x8q!rj7w+n2p^c4m9e(l6b_t0a*h#f=yg)s1oi'
)

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = True

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'rest_framework',
    'corsheaders',
    'drf_spectacular',
    'django_extensions',
    'core.apps.CoreConfig',
]

MIDDLEWARE = [
    'corsheaders.middleware.CorsMiddleware',  # must stay above CommonMiddleware
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'active_pose.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'active_pose.wsgi.application'

# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

AUTH_PASSWORD_VALIDATORS = [
    {'NAME': 'django.contrib.auth.password_validation.UserAttributeSimilarityValidator'},
    {'NAME': 'django.contrib.auth.password_validation.MinimumLengthValidator'},
    {'NAME': 'django.contrib.auth.password_validation.CommonPasswordValidator'},
    {'NAME': 'django.contrib.auth.password_validation.NumericPasswordValidator'},
]

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

STATIC_URL = 'static/'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Django REST Framework Settings
REST_FRAMEWORK = {
    'DEFAULT_AUTHENTICATION_CLASSES': [
        'rest_framework.authentication.SessionAuthentication',
    ],
    'DEFAULT_PERMISSION_CLASSES': [
        'rest_framework.permissions.AllowAny',
    ],
    'DEFAULT_PAGINATION_CLASS': 'rest_framework.pagination.PageNumberPagination',
    'PAGE_SIZE': 10,
    'DEFAULT_SCHEMA_CLASS': 'drf_spectacular.openapi.AutoSchema',
}

CORS_ALLOWED_ORIGINS = [
    "http://localhost:8080",
    "http://127.0.0.1:8080",
    "http://localhost:5173",
]

SPECTACULAR_SETTINGS = {
    'TITLE': 'Active Pose API',
    'DESCRIPTION': 'Read-only access to pose refinement experiments, their trials and NBV trajectories.',
    'VERSION': '1.0.0',
    'SERVE_INCLUDE_SCHEMA': False,
    'SWAGGER_UI_SETTINGS': {
        'deepLinking': True,
        'displayRequestDuration': True,
        'filter': True,
        'docExpansion': 'none',
    },
}

# Signed distance grids are cached here, keyed by mesh digest and voxel size.
SDF_CACHE_DIR = Path(os.environ.get('ACTIVE_POSE_SDF_CACHE', BASE_DIR / 'data' / 'sdf'))

# Defaults for every run; a run config file and command flags override them.
ACTIVE_POSE = {
    'seed': 0,
    'seeds': 20,
    'kind': 'l-bracket',
    'material': 'glossy',
    'mode': 'active',
    'policies': ['nbv', 'random', 'max-distance'],
    'max_views': 5,
    'entropy_threshold': -10.0,
    'candidates': 40,
    'candidate_radius': 350.0,
    'perturb_trans': 30.0,
    'perturb_rot_deg': 30.0,
    'noise': True,
    'outlier_fraction': 0.0,
    'stride': 2,
    'passive_views': [1, 2, 4],
    'clutter': True,
    'n_jobs': 1,
    'thresholds': {'tau_I': 0.7, 'tau_sigma': 2.0, 'sigma_img': 0.01, 'patch': 7},
    'pattern': {'strong': 1.0, 'weak': 0.2, 'seed': 0, 'bounces': 3},
    'refine': {'max_iters': 50, 'outlier_gate': 10.0, 'gauge_tol': 1e-2},
    'camera': {'width': 128, 'height': 96, 'fx': 170.0, 'fy': 170.0, 'baseline': 60.0},
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {'format': '%(asctime)s %(levelname)s %(name)s: %(message)s'},
    },
    'handlers': {
        'console': {'class': 'logging.StreamHandler', 'formatter': 'simple'},
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': 'DEBUG' if os.environ.get('ACTIVE_POSE_DEBUG') else 'INFO',
            'propagate': False,
        },
    },
}
