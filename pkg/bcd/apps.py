from django.apps import AppConfig


class BcdConfig(AppConfig):
    name = 'bcd'
