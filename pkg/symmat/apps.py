from django.apps import AppConfig


class SymmatConfig(AppConfig):
    name = 'symmat'
