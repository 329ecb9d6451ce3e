"""
ASGI entry point for the psynet project.
"""

import os

from django.core.asgi import get_asgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'psynet.settings')

application = get_asgi_application()
