# core/api_urls.py

from django.urls import path

from .api_views import (
    ExperimentDetailAPIView, ExperimentListAPIView, ExperimentMetricsAPIView, TrajectoryAPIView, TrialListAPIView,
)

urlpatterns = [
    path('experiments/', ExperimentListAPIView.as_view(), name='api_experiment_list'),
    path('experiments/<int:pk>/', ExperimentDetailAPIView.as_view(), name='api_experiment_detail'),
    path('experiments/<int:pk>/metrics/', ExperimentMetricsAPIView.as_view(), name='api_experiment_metrics'),
    path('experiments/<int:experiment_id>/trials/', TrialListAPIView.as_view(), name='api_trial_list'),
    path('trials/<int:trial_id>/trajectory/', TrajectoryAPIView.as_view(), name='api_trajectory'),
]
