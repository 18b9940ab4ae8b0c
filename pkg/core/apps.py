# core/apps.py

import logging

from django.apps import AppConfig
from django.conf import settings

logger = logging.getLogger(__name__)


class CoreConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'core'
    verbose_name = 'Active pose refinement'

    def ready(self):
        cache_dir = getattr(settings, 'SDF_CACHE_DIR', None)
        if cache_dir is not None and not cache_dir.exists():
            logger.debug("SDF cache %s does not exist yet; grids will be built on first use.", cache_dir)
