# core/api_views.py

import pandas as pd
from django.shortcuts import get_object_or_404
from drf_spectacular.utils import OpenApiParameter, extend_schema
from rest_framework import generics
from rest_framework.pagination import PageNumberPagination
from rest_framework.permissions import AllowAny
from rest_framework.response import Response
from rest_framework.views import APIView

from .harness import METRICS
from .models import Experiment, TrajectoryStep, Trial
from .serializers import ExperimentDetailSerializer, ExperimentSerializer, TrajectoryStepSerializer, TrialSerializer


class ExperimentListAPIView(generics.ListAPIView):
    """
    Stored experiments, newest first.

    Filter with ?kind=, ?material= and ?q= (substring of the name).
    """
    serializer_class = ExperimentSerializer
    permission_classes = [AllowAny]
    pagination_class = PageNumberPagination

    @extend_schema(parameters=[
        OpenApiParameter('kind', str, description='Object kind, e.g. l-bracket'),
        OpenApiParameter('material', str, description='Material preset'),
        OpenApiParameter('q', str, description='Substring of the experiment name'),
    ])
    def get(self, request, *args, **kwargs):
        return super().get(request, *args, **kwargs)

    def get_queryset(self):
        queryset = Experiment.objects.all()
        params = self.request.query_params
        if params.get('kind'):
            queryset = queryset.filter(kind__icontains=params['kind'])
        if params.get('material'):
            queryset = queryset.filter(material=params['material'])
        if params.get('q', '').strip():
            queryset = queryset.filter(name__icontains=params['q'].strip())
        return queryset


class ExperimentDetailAPIView(generics.RetrieveAPIView):
    queryset = Experiment.objects.all()
    serializer_class = ExperimentDetailSerializer
    permission_classes = [AllowAny]


class TrialListAPIView(generics.ListAPIView):
    """Trials of one experiment; ?policy= narrows to one policy or method."""
    serializer_class = TrialSerializer
    permission_classes = [AllowAny]
    pagination_class = PageNumberPagination

    def get_queryset(self):
        experiment = get_object_or_404(Experiment, pk=self.kwargs['experiment_id'])
        queryset = Trial.objects.filter(experiment=experiment).select_related('experiment')
        policy = self.request.query_params.get('policy')
        if policy:
            queryset = queryset.filter(policy=policy)
        return queryset


class TrajectoryAPIView(generics.ListAPIView):
    serializer_class = TrajectoryStepSerializer
    permission_classes = [AllowAny]
    pagination_class = None

    def get_queryset(self):
        trial = get_object_or_404(Trial, pk=self.kwargs['trial_id'])
        return TrajectoryStep.objects.filter(trial=trial)


class ExperimentMetricsAPIView(APIView):
    """
    Detection rates of an experiment's final estimates per policy, at (5,5)
    and (2,2). Excluded trials are left out; failed trials count as misses.
    """
    permission_classes = [AllowAny]

    def get(self, request, pk):
        experiment = get_object_or_404(Experiment, pk=pk)
        rows = list(experiment.trials.filter(excluded=False).values('policy', 'trans_err', 'rot_err'))
        if not rows:
            return Response({'experiment': experiment.pk, 'metrics': []})
        frame = pd.DataFrame(rows)
        metrics = []
        for policy, group in frame.groupby('policy', sort=True):
            entry = {'policy': policy, 'trials': int(len(group))}
            for name, (trans_thresh, rot_thresh) in METRICS.items():
                hits = (group['trans_err'] < trans_thresh) & (group['rot_err'] < rot_thresh)
                entry[name] = float(100.0 * hits.sum() / len(group))
            metrics.append(entry)
        return Response({'experiment': experiment.pk, 'metrics': metrics})
