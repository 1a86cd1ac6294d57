# feig/apps.py
from django.apps import AppConfig

class FeigConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "feig"
    verbose_name = "Feature image generation"
