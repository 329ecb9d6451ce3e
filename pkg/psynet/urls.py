"""
URL configuration for the psynet project.

The admin lists recorded datasets and training runs; the same records are
exposed read-only under /api/.
"""
from django.contrib import admin
from django.urls import path, include
from rest_framework.routers import DefaultRouter
from decoder import views

router = DefaultRouter()
router.register(r'datasets', views.DatasetViewSet, basename='dataset')
router.register(r'runs', views.TrainingRunViewSet, basename='run')

urlpatterns = [
    # Admin
    path('admin/', admin.site.urls),

    # API Endpoints (all under /api/)
    path('api/', include(router.urls)),
    path('api-auth/', include('rest_framework.urls', namespace='rest_framework')),
]
