from django.apps import AppConfig

class DecoderConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'decoder'
    verbose_name = 'Phase synchrony decoder'
