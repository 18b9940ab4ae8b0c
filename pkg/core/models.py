# core/models.py

import math

from django.db import models, transaction


def _finite(value):
    if value is None or isinstance(value, str):
        return None
    value = float(value)
    return value if math.isfinite(value) else None


class ExperimentManager(models.Manager):
    def record(self, config, report, name=''):
        """Store a finished run: one Experiment, its trials and their trajectories."""
        with transaction.atomic():
            experiment = self.create(
                name=name or config.out,
                kind=','.join(config.all_kinds),
                material=config.material,
                mode=config.mode,
                policies=list(config.policies),
                seed=config.seed,
                config=config.to_dict(),
                output_dir=report['out'],
                status=Experiment.Status.FAILED if report['failed'] == report['trials'] else Experiment.Status.DONE,
            )
            index = 0
            for outcome in report['outcomes']:
                rows = outcome.summary or [{'policy': ''}]
                for row in rows:
                    trial = Trial.objects.create(
                        experiment=experiment,
                        index=index,
                        kind=outcome.kind,
                        seed=outcome.seed,
                        policy=row.get('policy', ''),
                        views_used=row.get('views_used') or 0,
                        views_to_success=row.get('views_to_success'),
                        trans_err=_finite(row.get('trans_err')),
                        rot_err=_finite(row.get('rot_err')),
                        converged=bool(row.get('converged', False)),
                        visibility=outcome.visibility,
                        excluded=outcome.excluded,
                        error=outcome.error,
                    )
                    index += 1
                    TrajectoryStep.objects.bulk_create([
                        TrajectoryStep(
                            trial=trial,
                            step=step['step'],
                            view_id=step['view_id'],
                            pose=step['pose'],
                            covariance=step['covariance'],
                            entropy=_finite(step['entropy']),
                            rank=step['rank'],
                            trans_err=_finite(step['trans_err']),
                            rot_err=_finite(step['rot_err']),
                            converged=step['converged'],
                        )
                        for step in outcome.steps
                        if step.get('policy') == trial.policy and 'step' in step
                    ])
        return experiment


class Experiment(models.Model):
    class Status(models.TextChoices):
        RUNNING = 'running', 'Running'
        DONE = 'done', 'Done'
        FAILED = 'failed', 'Failed'

    name = models.CharField(max_length=255)
    kind = models.CharField(max_length=255)
    material = models.CharField(max_length=50)
    mode = models.CharField(max_length=20, default='active')
    policies = models.JSONField(default=list)
    seed = models.IntegerField(default=0)
    config = models.JSONField(default=dict)
    output_dir = models.CharField(max_length=500, blank=True)
    status = models.CharField(max_length=20, choices=Status.choices, default=Status.RUNNING)
    created_at = models.DateTimeField(auto_now_add=True)

    objects = ExperimentManager()

    class Meta:
        ordering = ['-created_at', '-id']

    def __str__(self):
        return f"{self.name} ({self.kind}, {self.material})"


class Trial(models.Model):
    experiment = models.ForeignKey(Experiment, on_delete=models.CASCADE, related_name='trials')
    index = models.IntegerField()
    kind = models.CharField(max_length=50)
    seed = models.IntegerField()
    policy = models.CharField(max_length=50, blank=True)
    views_used = models.IntegerField(default=0)
    views_to_success = models.IntegerField(null=True, blank=True)  # first view meeting (5,5)
    trans_err = models.FloatField(null=True, blank=True)  # mm
    rot_err = models.FloatField(null=True, blank=True)  # degrees
    converged = models.BooleanField(default=False)
    visibility = models.FloatField(default=0.0)
    excluded = models.BooleanField(default=False)
    error = models.TextField(blank=True)

    class Meta:
        ordering = ['experiment', 'index']
        unique_together = [('experiment', 'index')]

    def __str__(self):
        return f"{self.kind} seed {self.seed} [{self.policy}]"


class TrajectoryStep(models.Model):
    trial = models.ForeignKey(Trial, on_delete=models.CASCADE, related_name='steps')
    step = models.IntegerField()
    view_id = models.IntegerField()
    pose = models.JSONField()  # 4x4 T_ow, row-major
    covariance = models.JSONField()  # 36 values, row-major
    entropy = models.FloatField(null=True, blank=True)  # nats; null when unbounded
    rank = models.IntegerField(default=6)
    trans_err = models.FloatField(null=True, blank=True)
    rot_err = models.FloatField(null=True, blank=True)
    converged = models.BooleanField(default=False)

    class Meta:
        ordering = ['trial', 'step']

    def __str__(self):
        return f"step {self.step}: view {self.view_id}"
