from django.apps import AppConfig


class LaplaceConfig(AppConfig):
    name = 'laplace'
