from django.apps import AppConfig


class WorkflowsConfig(AppConfig):
    name = 'workflows'
    verbose_name = 'Workflows and triggers'
