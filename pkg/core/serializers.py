# core/serializers.py

from rest_framework import serializers

from .models import Experiment, TrajectoryStep, Trial


class ExperimentSerializer(serializers.ModelSerializer):
    trial_count = serializers.IntegerField(source='trials.count', read_only=True)

    class Meta:
        model = Experiment
        fields = [
            'id', 'name', 'kind', 'material', 'mode', 'policies', 'seed', 'output_dir', 'status',
            'created_at', 'trial_count',
        ]
        read_only_fields = fields


class ExperimentDetailSerializer(ExperimentSerializer):
    """Adds the stored run config, which is enough to reproduce the experiment."""

    class Meta(ExperimentSerializer.Meta):
        fields = ExperimentSerializer.Meta.fields + ['config']
        read_only_fields = fields


class TrialSerializer(serializers.ModelSerializer):
    experiment_name = serializers.CharField(source='experiment.name', read_only=True)

    class Meta:
        model = Trial
        fields = [
            'id', 'experiment', 'experiment_name', 'index', 'kind', 'seed', 'policy', 'views_used',
            'views_to_success', 'trans_err', 'rot_err', 'converged', 'visibility', 'excluded', 'error',
        ]
        read_only_fields = fields


class TrajectoryStepSerializer(serializers.ModelSerializer):
    class Meta:
        model = TrajectoryStep
        fields = ['id', 'step', 'view_id', 'pose', 'covariance', 'entropy', 'rank', 'trans_err', 'rot_err',
                  'converged']
        read_only_fields = fields
