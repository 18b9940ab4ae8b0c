# Generated by Django 5.2.4 on 2026-10-19 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='Experiment',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=255)),
                ('kind', models.CharField(max_length=255)),
                ('material', models.CharField(max_length=50)),
                ('mode', models.CharField(default='active', max_length=20)),
                ('policies', models.JSONField(default=list)),
                ('seed', models.IntegerField(default=0)),
                ('config', models.JSONField(default=dict)),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('status', models.CharField(choices=[('running', 'Running'), ('done', 'Done'), ('failed', 'Failed')], default='running', max_length=20)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at', '-id'],
            },
        ),
        migrations.CreateModel(
            name='Trial',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('index', models.IntegerField()),
                ('kind', models.CharField(max_length=50)),
                ('seed', models.IntegerField()),
                ('policy', models.CharField(blank=True, max_length=50)),
                ('views_used', models.IntegerField(default=0)),
                ('views_to_success', models.IntegerField(blank=True, null=True)),
                ('trans_err', models.FloatField(blank=True, null=True)),
                ('rot_err', models.FloatField(blank=True, null=True)),
                ('converged', models.BooleanField(default=False)),
                ('visibility', models.FloatField(default=0.0)),
                ('excluded', models.BooleanField(default=False)),
                ('error', models.TextField(blank=True)),
                ('experiment', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='trials', to='core.experiment')),
            ],
            options={
                'ordering': ['experiment', 'index'],
                'unique_together': {('experiment', 'index')},
            },
        ),
        migrations.CreateModel(
            name='TrajectoryStep',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('step', models.IntegerField()),
                ('view_id', models.IntegerField()),
                ('pose', models.JSONField()),
                ('covariance', models.JSONField()),
                ('entropy', models.FloatField(blank=True, null=True)),
                ('rank', models.IntegerField(default=6)),
                ('trans_err', models.FloatField(blank=True, null=True)),
                ('rot_err', models.FloatField(blank=True, null=True)),
                ('converged', models.BooleanField(default=False)),
                ('trial', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='steps', to='core.trial')),
            ],
            options={
                'ordering': ['trial', 'step'],
            },
        ),
    ]
