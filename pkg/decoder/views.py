"""
Read-only API endpoints over the recorded datasets and training runs.
"""
from rest_framework import viewsets
from rest_framework.decorators import action
from rest_framework.exceptions import ValidationError
from rest_framework.response import Response

from .models import Dataset, TrainingRun
from .serializers import DatasetSerializer, FoldResultSerializer, TrainingRunSerializer


class DatasetViewSet(viewsets.ReadOnlyModelViewSet):
    queryset = Dataset.objects.all()
    serializer_class = DatasetSerializer

    def get_queryset(self):
        queryset = super().get_queryset()
        source = self.request.query_params.get('source')
        if source:
            queryset = queryset.filter(source=source)
        return queryset


class TrainingRunViewSet(viewsets.ReadOnlyModelViewSet):
    queryset = TrainingRun.objects.select_related('dataset').all()
    serializer_class = TrainingRunSerializer

    def get_queryset(self):
        """Optional filtering by phaser flag, minimum recorded accuracy and status"""
        queryset = super().get_queryset()

        phaser = self.request.query_params.get('phaser')
        if phaser is not None:
            queryset = queryset.filter(phaser=phaser.lower() == 'true')

        min_accuracy = self.request.query_params.get('min_accuracy')
        if min_accuracy is not None:
            try:
                queryset = queryset.filter(recorded_accuracy__gte=float(min_accuracy))
            except ValueError:
                raise ValidationError({'min_accuracy': 'Must be a number.'})

        status = self.request.query_params.get('status')
        if status:
            queryset = queryset.filter(status=status)
        return queryset

    @action(detail=True, methods=['get'])
    def folds(self, request, pk=None):
        """Per-fold results of one run"""
        run = self.get_object()
        return Response(FoldResultSerializer(run.folds.all(), many=True).data)
