from django.apps import AppConfig


class LqrLabConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'lqr_lab'
    verbose_name = 'Adaptive LQR laboratory'
