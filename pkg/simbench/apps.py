from django.apps import AppConfig


class SimbenchConfig(AppConfig):
    name = 'simbench'
