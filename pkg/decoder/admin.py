"""
Admin views over the recorded datasets and training runs.
"""
from django.contrib import admin

from .models import Dataset, FoldResult, TrainingRun


class FoldResultInline(admin.TabularInline):
    model = FoldResult
    extra = 0
    fields = ('repeat', 'fold', 'accuracy', 'final_loss', 'train_size', 'test_size')
    readonly_fields = fields
    ordering = ('repeat', 'fold')
    can_delete = False


@admin.register(Dataset)
class DatasetAdmin(admin.ModelAdmin):
    list_display = ('name', 'source', 'n_trials', 'n_channels', 'n_samples', 'fs_hz', 'created_at')
    list_filter = ('source',)
    search_fields = ('name', 'path', 'sha256')
    readonly_fields = ('sha256', 'created_at')


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = ('id', 'dataset', 'protocol', 'phaser', 'seed', 'recorded_accuracy', 'max_accuracy',
                    'mean_accuracy', 'fold_count', 'status', 'created_at')
    list_filter = ('status', 'protocol', 'phaser', 'record_rule')
    search_fields = ('out_dir', 'message', 'dataset__name')
    inlines = [FoldResultInline]

    fieldsets = (
        ('Run', {
            'fields': ('dataset', 'out_dir', 'protocol', 'phaser', 'seed', 'status', 'message')
        }),
        ('Results', {
            'fields': ('record_rule', 'recorded_accuracy', 'max_accuracy', 'mean_accuracy', 'wall_time_s')
        }),
        ('Resolved configuration', {
            'classes': ('collapse',),
            'fields': ('config',)
        }),
    )
    readonly_fields = ('created_at',)
