"""
WSGI entry point for the psynet project, used by gunicorn to serve the
run-record API and the admin.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'psynet.settings')

application = get_wsgi_application()
