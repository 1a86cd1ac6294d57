# learning/apps.py
from django.apps import AppConfig

class LearningConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "learning"
    verbose_name = "Contrastive learning"
