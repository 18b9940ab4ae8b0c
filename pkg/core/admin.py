# core/admin.py

from django.contrib import admin

from .models import Experiment, TrajectoryStep, Trial


class TrialInline(admin.TabularInline):
    model = Trial
    extra = 0
    fields = ('index', 'kind', 'seed', 'policy', 'views_used', 'views_to_success', 'trans_err', 'rot_err',
              'excluded')
    readonly_fields = fields
    show_change_link = True


@admin.register(Experiment)
class ExperimentAdmin(admin.ModelAdmin):
    list_display = ('name', 'kind', 'material', 'mode', 'seed', 'status', 'created_at')
    list_filter = ('status', 'mode', 'material')
    search_fields = ('name', 'kind')
    inlines = [TrialInline]
    actions = ['mark_failed']

    def mark_failed(self, request, queryset):
        updated = queryset.update(status=Experiment.Status.FAILED)
        self.message_user(request, f'{updated} experiments marked as failed.')
    mark_failed.short_description = "Mark selected experiments as failed"


@admin.register(Trial)
class TrialAdmin(admin.ModelAdmin):
    list_display = ('experiment', 'index', 'kind', 'seed', 'policy', 'views_to_success', 'trans_err', 'rot_err',
                    'excluded')
    list_filter = ('policy', 'kind', 'excluded', 'converged')
    search_fields = ('experiment__name', 'kind', 'error')
    raw_id_fields = ('experiment',)


@admin.register(TrajectoryStep)
class TrajectoryStepAdmin(admin.ModelAdmin):
    list_display = ('trial', 'step', 'view_id', 'entropy', 'rank', 'trans_err', 'rot_err', 'converged')
    list_filter = ('converged', 'rank')
    raw_id_fields = ('trial',)
