from django.apps import AppConfig


class ObjectiveConfig(AppConfig):
    name = 'objective'
